"""HTTP service wrapping the pipeline runs.

Requests carry file paths and parameters; responses carry result summaries
and artifact paths. All compute happens synchronously on the server side,
which suits the desk-scale datasets this package targets. The CLI is a thin
client of this app (in-process by default, remote with --server).
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__, pipeline
from .errors import AdahashError
from .trainer import TrainConfig


class SynthRequest(BaseModel):
    out_dir: str
    clusters: int = 5
    per_cluster: int = 200
    dim: int = 32
    spread: float = 0.15
    seed: int = 0
    query_fraction: float = 0.1


class SynthResponse(BaseModel):
    features: str
    labels: str
    split: str
    n: int
    d: int
    classes: int


class GraphRequest(BaseModel):
    out_dir: str
    features: str
    labels: str | None = None
    k1: int | None = None
    k2: int | None = None
    gamma: float = 0.0
    symmetrize: bool = False
    threads: int | None = None


class GraphResponse(BaseModel):
    graph: str
    stats: str
    n_plus: int
    n_plus_before_symmetrize: int | None = None
    f_w: float | None
    mu: float
    sigma: float
    m: float


class TrainParams(BaseModel):
    bits: int = 16
    k1: int | None = None
    k2: int | None = None
    tau: float = 1.0
    lam: float = Field(default=10.0, alias="lambda")
    gamma: float = 0.0
    rounds: int = 3
    epochs: int = 10
    batch: int = 50
    eta: float = 1e-4
    seed: int = 0
    pic: str = "pic"
    pic_grad: str = "frozen"
    and_enabled: bool = Field(default=True, alias="and")
    symmetrize: bool = False
    hidden: int = 1000
    threads: int | None = None

    model_config = {"populate_by_name": True}

    def to_config(self) -> TrainConfig:
        return TrainConfig(
            bits=self.bits,
            k1=self.k1,
            k2=self.k2,
            tau=self.tau,
            lam=self.lam,
            gamma=self.gamma,
            rounds=self.rounds,
            epochs=self.epochs,
            batch_size=self.batch,
            eta=self.eta,
            seed=self.seed,
            pic_mode=self.pic,
            pic_grad=self.pic_grad,
            and_enabled=self.and_enabled,
            symmetrize=self.symmetrize,
            hidden=self.hidden,
            threads=self.threads,
        )


class TrainRequest(TrainParams):
    out_dir: str
    features: str
    labels: str | None = None
    split: str | None = None


class TrainResponse(BaseModel):
    checkpoint: str
    graph: str
    report: str
    rounds: str
    initial_n_plus: int
    initial_f_w: float | None
    final_n_plus: int
    final_f_w: float | None
    final_loss: float | None


class EvalRequest(BaseModel):
    out_dir: str
    checkpoint: str
    features: str
    labels: str
    split: str
    map_n: int = 5000
    prec_n: int = 100


class EvalMetrics(BaseModel):
    map: float
    map_n: int
    precision: float
    precision_n: int
    n_queries: int
    n_db: int
    bits: int


class EvalResponse(BaseModel):
    metrics: EvalMetrics
    metrics_path: str
    pr_curve: str
    precision_curve: str
    codes: str


class AblateRequest(TrainParams):
    out_dir: str
    features: str
    labels: str
    split: str
    grid_modes: list[str] | None = None
    grid_and: list[bool] | None = None
    map_n: int = 100
    prec_n: int = 100


class AblateCell(BaseModel):
    map: float
    precision: float
    final_f_w: float | None
    final_n_plus: int
    dir: str


class AblateResponse(BaseModel):
    cells: dict[str, AblateCell]
    table: str
    initial_n_plus: int


def create_app() -> FastAPI:
    app = FastAPI(title="adahash", version=__version__)

    @app.exception_handler(AdahashError)
    async def package_error(request: Request, exc: AdahashError):
        status = 500 if exc.kind == "numeric" else 400
        return JSONResponse(
            status_code=status,
            content={"detail": {"kind": exc.kind, "message": str(exc)}},
        )

    @app.exception_handler(FileNotFoundError)
    async def missing_file(request: Request, exc: FileNotFoundError):
        return JSONResponse(
            status_code=400,
            content={"detail": {"kind": "data", "message": str(exc)}},
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__}

    @app.post("/v1/synth", response_model=SynthResponse)
    def synth(req: SynthRequest):
        return pipeline.run_synth(
            req.out_dir,
            clusters=req.clusters,
            per_cluster=req.per_cluster,
            dim=req.dim,
            spread=req.spread,
            seed=req.seed,
            query_fraction=req.query_fraction,
        )

    @app.post("/v1/graph", response_model=GraphResponse)
    def graph(req: GraphRequest):
        return pipeline.run_graph(
            req.out_dir,
            features=req.features,
            k1=req.k1,
            k2=req.k2,
            gamma=req.gamma,
            labels=req.labels,
            symmetrize=req.symmetrize,
            threads=req.threads,
        )

    @app.post("/v1/train", response_model=TrainResponse)
    def train(req: TrainRequest):
        return pipeline.run_train(
            req.out_dir,
            features=req.features,
            cfg=req.to_config(),
            labels=req.labels,
            split=req.split,
        )

    @app.post("/v1/eval", response_model=EvalResponse)
    def evaluate(req: EvalRequest):
        result = pipeline.run_eval(
            req.out_dir,
            checkpoint=req.checkpoint,
            features=req.features,
            labels=req.labels,
            split=req.split,
            map_n=req.map_n,
            prec_n=req.prec_n,
        )
        return result

    @app.post("/v1/ablate", response_model=AblateResponse)
    def ablate(req: AblateRequest):
        return pipeline.run_ablate(
            req.out_dir,
            features=req.features,
            cfg=req.to_config(),
            labels=req.labels,
            split=req.split,
            grid_modes=req.grid_modes,
            grid_and=req.grid_and,
            map_n=req.map_n,
            prec_n=req.prec_n,
        )

    return app


app = create_app()
