"""
检查点服务

检查点是带版本号的 JSON 文本；数组按行优先写成嵌套列表
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import ValidationError

from models.errors import ALRNNError, CheckpointError
from models.experiment import CHECKPOINT_SCHEMA_VERSION, Checkpoint
from models.tasks import TaskDescriptor
from models.training import TrainConfig, TrainedModel

logger = logging.getLogger(__name__)


class CheckpointService:
    """
    检查点读写服务

    写出的文件逐字节可复现；读取时校验版本号与 A 的线性部分
    """

    def __init__(self, schema_version: int = CHECKPOINT_SCHEMA_VERSION) -> None:
        self.schema_version = schema_version

    def build(self, trained: TrainedModel, descriptor: TaskDescriptor, config: TrainConfig) -> Checkpoint:
        model = trained.model if trained.encoder is None else trained.encoder
        return Checkpoint(
            task=descriptor,
            seed=config.seed,
            M=model.M,
            P=model.P,
            K=model.K,
            O=trained.readout.O,
            model=trained.model,
            readout=trained.readout,
            encoder=trained.encoder,
            config=config.model_dump(),
        )

    def dumps(self, checkpoint: Checkpoint) -> str:
        return checkpoint.model_dump_json(indent=2) + "\n"

    def save(self, checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(checkpoint), encoding="utf-8")
        logger.info(f"Checkpoint written: {path}")
        return path

    @staticmethod
    def _check_linear_zeros(raw: Dict[str, Any], field: str) -> None:
        """A_diag 的前 M-P 个元素必须为 0；构造 ModelParams 会静默置零，所以在原始数据上检查"""
        params = raw.get(field)
        if params is None:
            return
        try:
            n_linear = int(params["M"]) - int(params["P"])
            offending = [i for i, a in enumerate(params["A_diag"][:n_linear]) if float(a) != 0.0]
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"malformed {field} parameters: {e}", {"field": field})
        if offending:
            raise CheckpointError(
                f"{field}.A_diag has nonzero entries on linear units {offending}",
                {"field": field, "indices": offending},
            )

    def loads(self, text: str, source: Optional[str] = None) -> Checkpoint:
        where = source or "<string>"
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"checkpoint {where} is not valid JSON: {e}", {"path": where})
        if not isinstance(raw, dict):
            raise CheckpointError(f"checkpoint {where} must be a JSON object", {"path": where})
        version = raw.get("schema_version")
        if version != self.schema_version:
            raise CheckpointError(
                f"unsupported checkpoint schema version {version!r} in {where}",
                {"path": where, "expected": self.schema_version, "got": version},
            )
        self._check_linear_zeros(raw, "model")
        self._check_linear_zeros(raw, "encoder")
        try:
            return Checkpoint.model_validate(raw)
        except ValidationError as e:
            raise CheckpointError(f"invalid checkpoint {where}: {e.error_count()} error(s)", {"errors": e.errors()})
        except ALRNNError as e:
            raise CheckpointError(f"invalid checkpoint {where}: {e.message}", {"path": where, **e.details})

    def load(self, path: Union[str, Path]) -> Checkpoint:
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"checkpoint not found: {path}", {"path": str(path)})
        return self.loads(path.read_text(encoding="utf-8"), str(path))

    @staticmethod
    def trained_model(checkpoint: Checkpoint) -> TrainedModel:
        return TrainedModel(model=checkpoint.model, readout=checkpoint.readout, encoder=checkpoint.encoder)

    @staticmethod
    def file_sha256(path: Union[str, Path]) -> str:
        digest = hashlib.sha256()
        with open(path, "rb") as f:
            for block in iter(lambda: f.read(1 << 16), b""):
                digest.update(block)
        return digest.hexdigest()


# 全局单例
checkpoint_service = CheckpointService()
