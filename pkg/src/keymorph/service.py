"""HTTP service backing the lambda-explorer UI.

All responses are JSON except image payloads (PNG). Weights are shared
read-only across requests; registration is pure per request.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image as PILImage

from . import harness
from . import synthdata as sd
from .errors import DegenerateConfiguration, DuplicatePoints, KeymorphError
from .registration import register as run_register
from .warp import Image, LabelMap


def _png_bytes(arr):
    """2-D arrays render directly; 3-D volumes render the mid-axial slice."""
    if arr.ndim == 3:
        arr = arr[arr.shape[0] // 2]
    data = (np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(data).save(buf, format="PNG")
    return buf.getvalue()


def _model_hash(weights):
    h = hashlib.sha256()
    h.update(json.dumps(weights.config.to_dict(), sort_keys=True).encode())
    for name, arr in weights.params.items():
        h.update(name.encode())
        h.update(arr.astype(np.float32).tobytes())
    return h.hexdigest()[:16]


def create_app(weights, data_dir, static_dir=None):
    subjects = sd.load_dataset(data_dir)
    by_id = {s["id"]: s for s in subjects}
    model_hash = _model_hash(weights)
    app = FastAPI(title="keymorph")

    def get_subject(sid):
        if sid not in by_id:
            raise HTTPException(status_code=404, detail=f"unknown subject {sid!r}")
        return by_id[sid]

    def get_modality(subject, k):
        try:
            k = int(k)
        except (TypeError, ValueError):
            raise HTTPException(status_code=400, detail="modality must be an integer")
        if not 0 <= k < len(subject["modalities"]):
            raise HTTPException(status_code=404, detail=f"unknown modality {k}")
        return subject["modalities"][k]

    @app.exception_handler(KeymorphError)
    async def keymorph_error(request: Request, exc: KeymorphError):
        if isinstance(exc, (DegenerateConfiguration, DuplicatePoints)):
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        return JSONResponse(status_code=500, content={"detail": "internal error"})

    @app.get("/api/health")
    def health():
        return {"status": "ok", "model": model_hash}

    @app.get("/api/subjects")
    def list_subjects():
        return {
            "subjects": [
                {"id": s["id"], "modalities": len(s["modalities"]),
                 "shape": list(s["modalities"][0].shape)}
                for s in subjects
            ]
        }

    @app.get("/api/image/{subject}/{modality}")
    def image(subject: str, modality: int):
        s = get_subject(subject)
        arr = get_modality(s, modality)
        return Response(content=_png_bytes(arr), media_type="image/png")

    @app.get("/api/keypoints/{subject}/{modality}")
    def keypoints(subject: str, modality: int):
        from . import detector as det

        s = get_subject(subject)
        arr = get_modality(s, modality)
        kp = det.detect(weights, arr)
        return {"subject": subject, "modality": modality, "keypoints": kp.points.tolist()}

    def _registration_payload(result, include_frame=True):
        payload = result.to_dict()
        payload.pop("transform", None)
        payload["transform_kind"] = (
            "affine" if result.lam is None else "tps"
        )
        if include_frame:
            payload["warped_png"] = base64.b64encode(_png_bytes(result.warped.data)).decode()
        return payload

    @app.post("/api/register")
    async def register_endpoint(request: Request):
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="malformed JSON body")
        for key in ("moving", "fixed"):
            if key not in body:
                raise HTTPException(status_code=400, detail=f"missing field {key!r}")
        kind = body.get("transform", "tps")
        if kind not in ("affine", "tps"):
            raise HTTPException(status_code=400, detail=f"unknown transform {kind!r}")
        lam = body.get("lambda")
        if lam is not None and lam < 0:
            raise HTTPException(status_code=400, detail="lambda must be nonnegative")
        sm = get_subject(body["moving"])
        sf = get_subject(body["fixed"])
        moving = Image(get_modality(sm, body.get("modality_m", 0)))
        fixed = Image(get_modality(sf, body.get("modality_f", 0)))
        result = run_register(
            weights, moving, fixed, kind=kind, lam=lam,
            moving_labels=sm["labels"], fixed_labels=sf["labels"],
        )
        from .transforms import transform_to_dict

        payload = _registration_payload(result)
        payload["transform"] = transform_to_dict(result.transform)
        return payload

    @app.get("/api/sweep")
    def sweep_endpoint(moving: str, fixed: str, lambdas: str,
                       modality_m: int = 0, modality_f: int = 0):
        try:
            lam_list = [float(x) for x in lambdas.split(",") if x != ""]
        except ValueError:
            raise HTTPException(status_code=400, detail=f"bad lambdas {lambdas!r}")
        if not lam_list:
            raise HTTPException(status_code=400, detail="empty lambda list")
        if any(l < 0 for l in lam_list):
            raise HTTPException(status_code=400, detail="lambdas must be nonnegative")
        sm = get_subject(moving)
        sf = get_subject(fixed)
        m_img = Image(get_modality(sm, modality_m))
        f_img = Image(get_modality(sf, modality_f))
        results = harness.lambda_sweep(
            weights, m_img, f_img, lam_list,
            moving_labels=sm["labels"], fixed_labels=sf["labels"],
        )
        entries = [
            dict(_registration_payload(r), **{"lambda": lam})
            for lam, r in results.items()
        ]
        fixed_png = base64.b64encode(_png_bytes(f_img.data)).decode()
        return {"moving": moving, "fixed": fixed, "entries": entries,
                "fixed_png": fixed_png}

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
