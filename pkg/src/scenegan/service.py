"""HTTP inference service for generation, direction banks, and editing.

Sessions are replayable: a session stores only its seed and the
accumulated edit coordinates, and every response is regenerated from that
record, so replaying (seed + edits) always reproduces the current image.
Inference runs under a single lock (one serialized model worker); the
session store has its own lock for concurrent clients.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .explorer import DirectionBank, EditOp, apply_edit
from .generator import CompositionalGenerator
from .grouping import default_color
from .imutil import colorize_indices, encode_png_base64, mask_to_indices


@dataclass
class ModelBundle:
    generator: CompositionalGenerator
    bank: DirectionBank | None = None
    palette: np.ndarray | None = None

    def __post_init__(self):
        if self.palette is None:
            c = self.generator.cfg.num_classes
            self.palette = np.array([default_color(i) for i in range(c)], dtype=np.uint8)


@dataclass
class Session:
    session_id: str
    seed: int
    # accumulated edit coordinates per (class, layer), each a k-vector
    edits: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)


class SessionCreate(BaseModel):
    seed: int | None = None


class EditRequest(BaseModel):
    class_idx: int = Field(alias="class")
    layer: int
    component: int
    magnitude: float

    model_config = {"populate_by_name": True}


def create_app(bundle: ModelBundle | None = None) -> FastAPI:
    app = FastAPI(title="scenegan editing service")
    sessions: dict[str, Session] = {}
    sessions_lock = threading.Lock()
    inference_lock = threading.Lock()

    def error(status: int, message: str, **extra):
        return JSONResponse(status_code=status, content={"error": message, **extra})

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        details = [
            {"field": ".".join(str(p) for p in e["loc"]), "message": e["msg"]}
            for e in exc.errors()
        ]
        return JSONResponse(status_code=400,
                            content={"error": "invalid request body", "details": details})

    @app.exception_handler(Exception)
    async def on_internal_error(request: Request, exc: Exception):
        return JSONResponse(status_code=500,
                            content={"error": f"internal error: {exc}"})

    def render_session(session: Session) -> dict:
        """Replay seed + accumulated edits into response payload."""
        generator = bundle.generator
        with inference_lock, torch.no_grad():
            rng = torch.Generator().manual_seed(session.seed)
            z = generator.sample_z(1, rng)
            triple = generator.map_latent(z)
            ops = [EditOp(class_idx=c, layer=l, coords=y)
                   for (c, l), y in sorted(session.edits.items())]
            if ops:
                result = apply_edit(generator, triple, ops, bundle.bank)
            else:
                result = generator.generate(triple)
        image = ((result.image[0].clamp(-1, 1) + 1) * 127.5).round() \
            .to(torch.uint8).permute(1, 2, 0).numpy()
        overlay = colorize_indices(mask_to_indices(result.final_mask[0]), bundle.palette)
        coarse = colorize_indices(mask_to_indices(result.coarse_mask[0]), bundle.palette)
        return {
            "session_id": session.session_id,
            "seed": session.seed,
            "image": encode_png_base64(image),
            "mask_overlay": encode_png_base64(overlay),
            "coarse_mask": encode_png_base64(coarse),
        }

    @app.post("/sessions")
    def create_session(body: SessionCreate):
        if bundle is None:
            return error(503, "model not loaded")
        seed = body.seed
        if seed is None:
            seed = int.from_bytes(uuid.uuid4().bytes[:4], "big")
        session = Session(session_id=uuid.uuid4().hex, seed=seed)
        with sessions_lock:
            sessions[session.session_id] = session
        return render_session(session)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        if bundle is None:
            return error(503, "model not loaded")
        with sessions_lock:
            session = sessions.get(session_id)
        if session is None:
            return error(404, f"unknown session {session_id}")
        return render_session(session)

    @app.get("/directions")
    def directions():
        if bundle is None:
            return error(503, "model not loaded")
        if bundle.bank is None or not bundle.bank.entries:
            return error(404, "no direction bank loaded")
        return {
            "style_dim": bundle.bank.style_dim,
            "entries": [
                {
                    "class": c,
                    "layer": l,
                    "k": entry.k,
                    "variances": [float(v) for v in entry.variances],
                }
                for (c, l), entry in sorted(bundle.bank.entries.items())
            ],
        }

    @app.post("/sessions/{session_id}/edit")
    def edit_session(session_id: str, body: EditRequest):
        if bundle is None:
            return error(503, "model not loaded")
        with sessions_lock:
            session = sessions.get(session_id)
        if session is None:
            return error(404, f"unknown session {session_id}")
        if bundle.bank is None:
            return error(422, "no direction bank loaded")
        key = (body.class_idx, body.layer)
        if key not in bundle.bank.entries:
            return error(422, f"no directions for class {body.class_idx} "
                              f"layer {body.layer}")
        entry = bundle.bank.entries[key]
        if not 0 <= body.component < entry.k:
            return error(422, f"component must lie in [0, {entry.k})")
        with sessions_lock:
            coords = session.edits.setdefault(key, np.zeros(entry.k))
            coords[body.component] += body.magnitude
        return render_session(session)

    return app
