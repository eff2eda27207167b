"""HTTP scoring service: the reward stack behind POST /score."""
from __future__ import annotations

import hashlib
import json
from typing import List, Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .rewards import RewardConfig, Scorer
from .taxonomy import Taxonomy, TaxonomyError

DEFAULT_BATCH_CAP = 256


class ScoreItem(BaseModel):
    raw_output: str
    gold_code: str


class ScoreRequest(BaseModel):
    items: List[ScoreItem] = Field(min_length=1)
    config_override: Optional[dict] = None


def _config_digest(cfg: RewardConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def create_app(taxonomy: Taxonomy, cfg: RewardConfig = RewardConfig(),
               dataset_counts=None, batch_cap: int = DEFAULT_BATCH_CAP) -> FastAPI:
    """Stateless app over one immutable taxonomy and a default reward config.

    Item-level failures (e.g. an unknown gold code) come back as per-item
    error entries; only an oversized batch fails the whole request.
    """
    app = FastAPI(title="hierarchical reward scorer")
    base_scorer = Scorer(taxonomy, cfg, dataset_counts=dataset_counts)

    @app.get("/health")
    def health():
        return {"status": "ok", "taxonomy_id": taxonomy.name,
                "config_digest": _config_digest(cfg)}

    @app.post("/score")
    def score(req: ScoreRequest):
        if len(req.items) > batch_cap:
            return JSONResponse(
                status_code=413,
                content={"error": "batch_too_large",
                         "detail": f"{len(req.items)} items exceeds cap {batch_cap}"},
            )
        if req.config_override:
            try:
                resolved = cfg.replace(**req.config_override)
            except (TypeError, ValueError) as exc:
                return JSONResponse(status_code=400,
                                    content={"error": "bad_config", "detail": str(exc)})
            scorer = Scorer(taxonomy, resolved, dataset_counts=dataset_counts)
        else:
            resolved = cfg
            scorer = base_scorer
        items = []
        for item in req.items:
            try:
                bd = scorer.score(item.raw_output, item.gold_code)
            except TaxonomyError as exc:
                items.append({"ok": False, "error": "bad_gold_code", "detail": str(exc)})
                continue
            items.append({"ok": True, **bd.to_dict()})
        return {"items": items, "resolved_config": resolved.to_dict(),
                "taxonomy_id": taxonomy.name}

    return app
