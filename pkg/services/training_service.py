"""
训练服务

负责：
1. 参数初始化与 MAR 正则
2. 单个 AL-RNN（复制/加法/情境任务）与编码器-解码器（SCAN）的 BPTT 梯度
3. Adam + 余弦退火 + 梯度裁剪的训练循环，按验证集损失选择模型
"""
import logging
import math
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from config.settings import settings
from models.errors import DimensionMismatchError, InvalidInputError, TrainingDivergedError
from models.params import ModelParams, Readout
from models.tasks import LossKind, LossSpec, TaskDataset, TaskInstance, TaskName, stack_inputs
from models.training import EpochRecord, ModelDims, TrainConfig, TrainedModel, TrainingLog, TrainResult
from services import bptt
from services.optimizer import AdamState, adam_step, clip_gradients, cosine_lr
from services.scan_service import decode_free, encode_batch, pad_commands
from services.task_service import evaluate_metric

logger = logging.getLogger(__name__)

INIT_STD = 0.01
EVAL_CHUNK = 256


# ---------------------------------------------------------------------------
# 初始化与正则
# ---------------------------------------------------------------------------

def init_params(M: int, P: int, K: int, O: int, seed: int) -> Tuple[ModelParams, Readout]:
    """
    高斯初始化（均值 0，标准差 0.01）

    抽样顺序固定为 A、W、C、h、D；A 的线性部分为 0，读出偏置为 0。
    """
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, INIT_STD, size=M)
    A[: M - P] = 0.0
    W = rng.normal(0.0, INIT_STD, size=(M, M))
    C = rng.normal(0.0, INIT_STD, size=(M, K))
    h = rng.normal(0.0, INIT_STD, size=M)
    D = rng.normal(0.0, INIT_STD, size=(O, M))
    params = ModelParams(M=M, P=P, K=K, A_diag=A, W=W, C=C, h=h)
    return params, Readout(D=D, bias=np.zeros(O))


def _effective_diagonal(params: ModelParams, m_reg: int) -> np.ndarray:
    """Ã_ii：线性单元取 W_ii，非线性单元取 A_ii + W_ii（A 的线性部分恒为 0）"""
    return params.A_diag[:m_reg] + np.diag(params.W)[:m_reg]


def mar_loss(params: ModelParams, m_reg: int, tau: float) -> float:
    """流形吸引子正则：前 m_reg 个单元的自连接趋近 1，交叉连接与偏置趋近 0"""
    if m_reg > params.M:
        raise InvalidInputError(f"m_reg={m_reg} exceeds M={params.M}")
    if tau == 0.0 or m_reg == 0:
        return 0.0
    rows = params.W[:m_reg]
    off_diag = float(np.sum(rows ** 2) - np.sum(np.diag(params.W)[:m_reg] ** 2))
    diag = float(np.sum((_effective_diagonal(params, m_reg) - 1.0) ** 2))
    return tau * (diag + off_diag + float(np.sum(params.h[:m_reg] ** 2)))


def mar_gradients(params: ModelParams, m_reg: int, tau: float) -> Dict[str, np.ndarray]:
    """mar_loss 对 A_diag、W、h 的解析梯度"""
    grads = {"A_diag": np.zeros(params.M), "W": np.zeros((params.M, params.M)), "h": np.zeros(params.M)}
    if tau == 0.0 or m_reg == 0:
        return grads
    idx = np.arange(m_reg)
    grads["W"][:m_reg] = 2.0 * tau * params.W[:m_reg]
    d_diag = 2.0 * tau * (_effective_diagonal(params, m_reg) - 1.0)
    grads["W"][idx, idx] = d_diag
    grads["A_diag"][:m_reg] = d_diag
    grads["A_diag"][: params.n_linear] = 0.0
    grads["h"][:m_reg] = 2.0 * tau * params.h[:m_reg]
    return grads


# ---------------------------------------------------------------------------
# 目标张量
# ---------------------------------------------------------------------------

def _windows(batch: Sequence[TaskInstance], loss: LossSpec) -> List[Tuple[int, int]]:
    if loss.window is not None:
        return [loss.resolve_window(inst.T) for inst in batch]
    return [inst.loss_window for inst in batch]


def class_targets(batch: Sequence[TaskInstance], loss: LossSpec, T: int) -> np.ndarray:
    """(B, T) 类别索引，窗口外为 -1"""
    targets = np.full((len(batch), T), -1, dtype=np.int64)
    for b, (inst, (start, stop)) in enumerate(zip(batch, _windows(batch, loss))):
        if stop > start:
            targets[b, start:stop] = inst.target if isinstance(inst.target, list) else int(inst.target)
    return targets


def value_targets(batch: Sequence[TaskInstance], loss: LossSpec, T: int) -> Tuple[np.ndarray, np.ndarray]:
    """(B, T, 1) 标量目标与 (B, T) 掩码"""
    targets = np.zeros((len(batch), T, 1))
    mask = np.zeros((len(batch), T), dtype=bool)
    for b, (inst, (start, stop)) in enumerate(zip(batch, _windows(batch, loss))):
        targets[b, start:stop, 0] = float(inst.target)
        mask[b, start:stop] = True
    return targets, mask


def _readout_loss(readout: Readout, states: np.ndarray, batch: Sequence[TaskInstance], loss: LossSpec) -> bptt.ReadoutLoss:
    T = states.shape[1]
    if loss.kind == LossKind.FINAL_SQUARED_ERROR:
        targets, mask = value_targets(batch, loss, T)
        return bptt.squared_error_loss(readout, states, targets, mask)
    return bptt.cross_entropy_loss(readout, states, class_targets(batch, loss, T))


class GradientResult(NamedTuple):
    """总损失（任务损失 + MAR）、任务损失与各参数梯度"""
    loss: float
    task_loss: float
    gradients: Dict[str, np.ndarray]


def _check_finite(loss: float, where: str) -> None:
    if not math.isfinite(loss):
        logger.error(f"Non-finite loss ({loss}) during {where}")
        raise TrainingDivergedError(f"Loss became non-finite ({loss}) during {where}", {"where": where})


def bptt_gradients(
    params: ModelParams,
    readout: Readout,
    batch: Sequence[TaskInstance],
    loss: LossSpec,
    tau: float,
    m_reg: int,
) -> GradientResult:
    """
    单个 AL-RNN + 读出层的精确梯度：批平均的任务损失加 MAR

    Raises:
        TrainingDivergedError: 损失非有限
    """
    if not batch:
        raise InvalidInputError("batch must be nonempty")
    S = stack_inputs(list(batch))
    if S.shape[2] != params.K:
        raise DimensionMismatchError(f"inputs have K={S.shape[2]}, model expects K={params.K}")
    if readout.M != params.M:
        raise DimensionMismatchError(f"readout expects M={readout.M}, model has M={params.M}")
    cache = bptt.forward(params, None, S)
    out = _readout_loss(readout, cache.states, batch, loss)
    grads, _ = bptt.backward(params, cache, out.d_states)
    reg = mar_loss(params, m_reg, tau)
    for name, g in mar_gradients(params, m_reg, tau).items():
        grads[name] += g
    grads["D"] = out.d_D
    grads["bias"] = out.d_bias
    total = out.loss + reg
    _check_finite(total, "bptt_gradients")
    return GradientResult(total, out.loss, grads)


# ---------------------------------------------------------------------------
# 学习器
# ---------------------------------------------------------------------------

def _chunks(items: Sequence[TaskInstance], size: int) -> List[Sequence[TaskInstance]]:
    return [items[i:i + size] for i in range(0, len(items), size)]


class ALRNNLearner:
    """单个 AL-RNN + 线性读出，适用于复制、加法与情境任务"""

    def __init__(self, params: ModelParams, readout: Readout, task: TaskName, loss: LossSpec, tau: float, m_reg: int):
        self.M, self.P, self.K = params.M, params.P, params.K
        self.task = task
        self.loss = loss
        self.tau = tau
        self.m_reg = m_reg
        self.arrays: Dict[str, np.ndarray] = {
            "A_diag": np.array(params.A_diag), "W": np.array(params.W), "C": np.array(params.C),
            "h": np.array(params.h), "D": np.array(readout.D), "bias": np.array(readout.bias),
        }
        linear = np.zeros(self.M, dtype=bool)
        linear[: self.M - self.P] = True
        self.zero_masks = {"A_diag": linear}

    def params(self) -> ModelParams:
        a = self.arrays
        return ModelParams(M=self.M, P=self.P, K=self.K, A_diag=a["A_diag"], W=a["W"], C=a["C"], h=a["h"])

    def readout(self) -> Readout:
        return Readout(D=self.arrays["D"], bias=self.arrays["bias"])

    def snapshot(self) -> TrainedModel:
        return TrainedModel(model=self.params(), readout=self.readout())

    def loss_and_gradients(self, batch: Sequence[TaskInstance]) -> GradientResult:
        return bptt_gradients(self.params(), self.readout(), batch, self.loss, self.tau, self.m_reg)

    def regularization(self) -> float:
        return mar_loss(self.params(), self.m_reg, self.tau)

    def task_loss(self, instances: Sequence[TaskInstance]) -> float:
        """实例平均的任务损失（不含 MAR）"""
        params, readout = self.params(), self.readout()
        total = 0.0
        for chunk in _chunks(instances, EVAL_CHUNK):
            states = bptt.forward(params, None, stack_inputs(list(chunk))).states
            total += _readout_loss(readout, states, chunk, self.loss).loss * len(chunk)
        return total / len(instances)

    def metric(self, instances: Sequence[TaskInstance]) -> float:
        return evaluate_single(self.snapshot(), self.task, instances)


class EncoderDecoderLearner:
    """
    编码器-解码器（SCAN）

    编码器读入 one-hot 指令，末状态作为解码器初态；解码器零输入自由运行，
    每步经读出层给出动作 logits。梯度从解码器经初态回传到编码器。
    """

    def __init__(
        self,
        encoder: ModelParams,
        decoder: ModelParams,
        readout: Readout,
        tau: float,
        m_reg: int,
        decode_cap: int,
    ):
        if encoder.M != decoder.M:
            raise DimensionMismatchError(f"encoder M={encoder.M} must equal decoder M={decoder.M}")
        self.enc_dims = (encoder.M, encoder.P, encoder.K)
        self.dec_dims = (decoder.M, decoder.P, decoder.K)
        self.tau = tau
        self.m_reg = m_reg
        self.decode_cap = decode_cap
        self.arrays: Dict[str, np.ndarray] = {}
        for prefix, p in (("enc", encoder), ("dec", decoder)):
            for name in bptt.PARAM_NAMES:
                self.arrays[f"{prefix}.{name}"] = np.array(getattr(p, name))
        self.arrays["D"] = np.array(readout.D)
        self.arrays["bias"] = np.array(readout.bias)
        self.zero_masks = {}
        for prefix, (M, P, _) in (("enc", self.enc_dims), ("dec", self.dec_dims)):
            linear = np.zeros(M, dtype=bool)
            linear[: M - P] = True
            self.zero_masks[f"{prefix}.A_diag"] = linear

    def _model(self, prefix: str) -> ModelParams:
        M, P, K = self.enc_dims if prefix == "enc" else self.dec_dims
        a = {name: self.arrays[f"{prefix}.{name}"] for name in bptt.PARAM_NAMES}
        return ModelParams(M=M, P=P, K=K, **a)

    def readout(self) -> Readout:
        return Readout(D=self.arrays["D"], bias=self.arrays["bias"])

    def snapshot(self) -> TrainedModel:
        return TrainedModel(model=self._model("dec"), readout=self.readout(), encoder=self._model("enc"))

    def regularization(self) -> float:
        return mar_loss(self._model("enc"), self.m_reg, self.tau) + mar_loss(self._model("dec"), self.m_reg, self.tau)

    def _forward(self, batch: Sequence[TaskInstance]) -> Tuple[bptt.ForwardCache, bptt.ForwardCache, np.ndarray]:
        enc, dec = self._model("enc"), self._model("dec")
        S, active = pad_commands(batch)
        enc_cache = bptt.forward(enc, None, S, active)
        T_dec = max(len(inst.target) for inst in batch)
        dec_inputs = np.zeros((len(batch), T_dec, dec.K))
        dec_cache = bptt.forward(dec, enc_cache.states[:, -1], dec_inputs)
        targets = np.full((len(batch), T_dec), -1, dtype=np.int64)
        for b, inst in enumerate(batch):
            targets[b, : len(inst.target)] = inst.target
        return enc_cache, dec_cache, targets

    def loss_and_gradients(self, batch: Sequence[TaskInstance]) -> GradientResult:
        enc, dec, readout = self._model("enc"), self._model("dec"), self.readout()
        enc_cache, dec_cache, targets = self._forward(batch)
        out = bptt.cross_entropy_loss(readout, dec_cache.states, targets)
        dec_grads, d_z0 = bptt.backward(dec, dec_cache, out.d_states)
        enc_grads, _ = bptt.backward(enc, enc_cache, None, d_final=d_z0)
        grads: Dict[str, np.ndarray] = {}
        for prefix, model, g in (("enc", enc, enc_grads), ("dec", dec, dec_grads)):
            for name, reg in mar_gradients(model, self.m_reg, self.tau).items():
                g[name] += reg
            for name, value in g.items():
                grads[f"{prefix}.{name}"] = value
        grads["D"] = out.d_D
        grads["bias"] = out.d_bias
        total = out.loss + self.regularization()
        _check_finite(total, "encoder-decoder bptt")
        return GradientResult(total, out.loss, grads)

    def task_loss(self, instances: Sequence[TaskInstance]) -> float:
        readout = self.readout()
        total = 0.0
        for chunk in _chunks(instances, EVAL_CHUNK):
            _, dec_cache, targets = self._forward(chunk)
            total += bptt.cross_entropy_loss(readout, dec_cache.states, targets).loss * len(chunk)
        return total / len(instances)

    def metric(self, instances: Sequence[TaskInstance]) -> float:
        return evaluate_scan(self.snapshot(), instances, self.decode_cap)


# ---------------------------------------------------------------------------
# 评估
# ---------------------------------------------------------------------------

def window_outputs(trained: TrainedModel, instances: Sequence[TaskInstance]) -> List[np.ndarray]:
    """每个实例在其损失窗口内的读出输出 (window, O)"""
    outputs: List[np.ndarray] = []
    for chunk in _chunks(instances, EVAL_CHUNK):
        states = bptt.forward(trained.model, None, stack_inputs(list(chunk))).states
        Y = states @ trained.readout.D.T + trained.readout.bias
        for b, inst in enumerate(chunk):
            start, stop = inst.loss_window
            outputs.append(Y[b, start:stop])
    return outputs


def evaluate_single(trained: TrainedModel, task: TaskName, instances: Sequence[TaskInstance]) -> float:
    """复制：符号正确率；加法：MSE；情境：分类正确率"""
    return evaluate_metric(task, window_outputs(trained, instances), instances)


def evaluate_scan(trained: TrainedModel, instances: Sequence[TaskInstance], cap: int) -> float:
    """序列正确率；达到上限仍未结束的解码按错误计"""
    if trained.encoder is None:
        raise InvalidInputError("SCAN evaluation needs an encoder")
    predicted: List[List[int]] = []
    truncated = 0
    for chunk in _chunks(instances, EVAL_CHUNK):
        for result in decode_free(trained.model, trained.readout, encode_batch(trained.encoder, chunk), cap):
            predicted.append(result.token_ids if not result.truncated else [-1])
            truncated += int(result.truncated)
    if truncated:
        logger.debug(f"{truncated}/{len(instances)} SCAN decodes hit the {cap}-step cap")
    return evaluate_metric(TaskName.SCAN, predicted, instances)


def evaluate(trained: TrainedModel, dataset: TaskDataset, split: str = "test") -> float:
    """在数据集的指定划分上计算任务指标"""
    instances = dataset.test if split == "test" else dataset.train
    if dataset.name == TaskName.SCAN:
        return evaluate_scan(trained, instances, settings.scan_decode_cap)
    if trained.model.K != dataset.input_dim or trained.readout.O != dataset.output_dim:
        raise DimensionMismatchError(
            f"model (K={trained.model.K}, O={trained.readout.O}) does not match task "
            f"(K={dataset.input_dim}, O={dataset.output_dim})",
            {"model": [trained.model.K, trained.readout.O], "task": [dataset.input_dim, dataset.output_dim]},
        )
    return evaluate_single(trained, dataset.name, instances)


# ---------------------------------------------------------------------------
# 训练循环
# ---------------------------------------------------------------------------

def make_learner(dataset: TaskDataset, dims: ModelDims, config: TrainConfig):
    """按任务构造学习器并初始化参数"""
    m_reg = config.resolve_m_reg(dims.M)
    if dataset.name == TaskName.SCAN:
        P_dec = dims.P if dims.P_dec is None else dims.P_dec
        encoder, _ = init_params(dims.M, dims.P, dataset.input_dim, dataset.output_dim, config.seed)
        decoder, readout = init_params(dims.M, P_dec, 1, dataset.output_dim, config.seed + 1)
        return EncoderDecoderLearner(encoder, decoder, readout, config.tau, m_reg, settings.scan_decode_cap)
    params, readout = init_params(dims.M, dims.P, dataset.input_dim, dataset.output_dim, config.seed)
    return ALRNNLearner(params, readout, dataset.name, dataset.loss, config.tau, m_reg)


def split_validation(n: int, fraction: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """随机划出至少一个样本的验证集，返回 (训练索引, 验证索引)"""
    n_val = max(1, int(round(fraction * n)))
    if n_val >= n:
        raise InvalidInputError(f"validation split leaves no training data (n={n}, fraction={fraction})")
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(dataset: TaskDataset, config: TrainConfig, dims: ModelDims, tag: str = "") -> TrainResult:
    """
    训练并返回验证损失最优的参数

    epoch 0 记录初始化时的评估，保证返回的模型验证损失不劣于初始化。

    Raises:
        TrainingDivergedError: 损失非有限；last_finite 为此前最优的有限快照
    """
    prefix = f"[{tag}] " if tag else ""
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = split_validation(len(dataset.train), config.validation_fraction, rng)
    train_set = [dataset.train[i] for i in train_idx]
    val_set = [dataset.train[i] for i in val_idx]
    learner = make_learner(dataset, dims, config)
    state = AdamState.zeros_like(learner.arrays)

    val_loss = learner.task_loss(val_set)
    log = TrainingLog()
    log.records.append(
        EpochRecord(
            epoch=0,
            lr=config.learning_rate,
            train_loss=learner.task_loss(train_set) + learner.regularization(),
            val_loss=val_loss,
            val_metric=learner.metric(val_set),
        )
    )
    best_loss, best_epoch, best = val_loss, 0, learner.snapshot()
    logger.info(f"{prefix}Training {dataset.name.value}: {len(train_set)} train / {len(val_set)} val, init val_loss={val_loss:.6f}")

    for epoch in range(1, config.epochs + 1):
        lr = cosine_lr(epoch - 1, config.epochs, config.learning_rate)
        order = rng.permutation(len(train_set))
        batch_losses: List[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            try:
                result = learner.loss_and_gradients(batch)
            except TrainingDivergedError as e:
                e.details.update({"epoch": epoch, "batch": start // config.batch_size})
                e.last_finite = best
                e.partial_log = log
                raise
            grads = clip_gradients(result.gradients, config.grad_clip_norm)
            adam_step(state, learner.arrays, grads, lr, learner.zero_masks)
            batch_losses.append(result.loss)

        val_loss = learner.task_loss(val_set)
        if not math.isfinite(val_loss):
            logger.error(f"{prefix}Validation loss became non-finite at epoch {epoch}")
            error = TrainingDivergedError(
                f"Validation loss became non-finite at epoch {epoch}", {"epoch": epoch}, last_finite=best
            )
            error.partial_log = log
            raise error
        record = EpochRecord(
            epoch=epoch, lr=lr, train_loss=float(np.mean(batch_losses)),
            val_loss=val_loss, val_metric=learner.metric(val_set),
        )
        log.records.append(record)
        if val_loss < best_loss:
            best_loss, best_epoch, best = val_loss, epoch, learner.snapshot()
        if epoch % settings.log_every_epochs == 0 or epoch == config.epochs:
            logger.info(
                f"{prefix}epoch {epoch}/{config.epochs} lr={lr:.2e} train={record.train_loss:.6f} "
                f"val={val_loss:.6f} metric={record.val_metric:.4f}"
            )
        if config.early_stop_patience is not None and epoch - best_epoch >= config.early_stop_patience:
            logger.info(f"{prefix}Early stop at epoch {epoch} (best epoch {best_epoch})")
            log.stopped_early = True
            break

    log.best_epoch = best_epoch
    return TrainResult(trained=best, log=log)
