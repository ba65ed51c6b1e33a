"""
SCAN 语法、解释器与编码器-解码器推理

解释器是对指令字符串的递归下降解析；语料枚举则按语法规则自底向上生成，
两者互不依赖，便于交叉校验
"""
import logging
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from models.errors import InvalidConfigurationError, ScanParseError
from models.params import ModelParams, Readout
from models.tasks import LossKind, LossSpec, TaskDataset, TaskDescriptor, TaskInstance, TaskName
from services.dynamics import rollout_batch, step_batch

logger = logging.getLogger(__name__)

PRIMITIVES = {"walk": "WALK", "run": "RUN", "jump": "JUMP", "look": "LOOK"}
TURNS = {"left": "LTURN", "right": "RTURN"}
REPEATS = {"twice": 2, "thrice": 3}

COMMAND_VOCAB: Tuple[str, ...] = (
    "walk", "look", "run", "jump", "turn", "left", "right",
    "opposite", "around", "twice", "thrice", "and", "after",
)
ACTION_VOCAB: Tuple[str, ...] = ("WALK", "RUN", "JUMP", "LOOK", "LTURN", "RTURN", "<EOS>")
EOS = len(ACTION_VOCAB) - 1

_COMMAND_INDEX = {w: i for i, w in enumerate(COMMAND_VOCAB)}
_ACTION_INDEX = {a: i for i, a in enumerate(ACTION_VOCAB)}


# ---------------------------------------------------------------------------
# 解释器
# ---------------------------------------------------------------------------

class _Parser:
    """C → S (and|after) S | S；S → V [twice|thrice]；V → x [left|right|opposite d|around d]"""

    def __init__(self, tokens: List[str], command: str) -> None:
        self.tokens = tokens
        self.command = command
        self.pos = 0

    def _peek(self) -> Optional[str]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _fail(self) -> ScanParseError:
        return ScanParseError(self._peek(), self.pos, self.command)

    def _take(self) -> str:
        token = self._peek()
        if token is None:
            raise self._fail()
        self.pos += 1
        return token

    def parse(self) -> List[str]:
        first = self._sentence()
        op = self._peek()
        if op in ("and", "after"):
            self.pos += 1
            second = self._sentence()
            actions = first + second if op == "and" else second + first
        else:
            actions = first
        if self._peek() is not None:
            raise self._fail()
        return actions

    def _sentence(self) -> List[str]:
        actions = self._verb_phrase()
        token = self._peek()
        if token in REPEATS:
            self.pos += 1
            actions = actions * REPEATS[token]
        return actions

    def _direction(self) -> str:
        if self._peek() not in TURNS:
            raise self._fail()
        return TURNS[self._take()]

    def _verb_phrase(self) -> List[str]:
        token = self._peek()
        if token in PRIMITIVES:
            act = [PRIMITIVES[self._take()]]
        elif token == "turn":
            self.pos += 1
            act = []
        else:
            raise self._fail()

        modifier = self._peek()
        if modifier == "opposite":
            self.pos += 1
            turn = self._direction()
            return [turn, turn] + act
        if modifier == "around":
            self.pos += 1
            turn = self._direction()
            return ([turn] + act) * 4
        if modifier in TURNS:
            return [self._direction()] + act
        if not act:
            # 单独的 turn 必须带方向
            raise self._fail()
        return act


def tokenize(command: Union[str, Sequence[str]]) -> List[str]:
    return command.split() if isinstance(command, str) else list(command)


def scan_interpret(command: Union[str, Sequence[str]]) -> List[str]:
    """
    把 SCAN 指令翻译为动作序列

    Raises:
        ScanParseError: 指令不合语法，指出出错的 token 与位置
    """
    tokens = tokenize(command)
    text = " ".join(tokens)
    return _Parser(tokens, text).parse()


# ---------------------------------------------------------------------------
# 语料枚举
# ---------------------------------------------------------------------------

def _verb_phrases() -> Iterator[Tuple[str, List[str]]]:
    for word in ("walk", "look", "run", "jump", "turn"):
        act = [] if word == "turn" else [PRIMITIVES[word]]
        if word != "turn":
            yield word, act
        for direction, turn in TURNS.items():
            yield f"{word} {direction}", [turn] + act
            yield f"{word} opposite {direction}", [turn, turn] + act
            yield f"{word} around {direction}", ([turn] + act) * 4


def _sentences() -> List[Tuple[str, List[str]]]:
    out: List[Tuple[str, List[str]]] = []
    for phrase, actions in _verb_phrases():
        out.append((phrase, actions))
        for word, times in REPEATS.items():
            out.append((f"{phrase} {word}", actions * times))
    return out


def scan_enumerate() -> List[Tuple[str, List[str]]]:
    """完整的 SCAN 指令空间（20,910 条），含由语法直接构造的动作序列"""
    sentences = _sentences()
    corpus = list(sentences)
    for left, left_actions in sentences:
        for right, right_actions in sentences:
            corpus.append((f"{left} and {right}", left_actions + right_actions))
            corpus.append((f"{left} after {right}", right_actions + left_actions))
    return corpus


# ---------------------------------------------------------------------------
# 编码与数据集
# ---------------------------------------------------------------------------

def encode_command(command: Union[str, Sequence[str]]) -> np.ndarray:
    """指令 one-hot 编码 (L, |COMMAND_VOCAB|)"""
    tokens = tokenize(command)
    out = np.zeros((len(tokens), len(COMMAND_VOCAB)))
    for t, token in enumerate(tokens):
        if token not in _COMMAND_INDEX:
            raise ScanParseError(token, t, " ".join(tokens))
        out[t, _COMMAND_INDEX[token]] = 1.0
    return out


def encode_actions(actions: Sequence[str]) -> List[int]:
    """动作序列编码为索引，并追加结束符"""
    return [_ACTION_INDEX[a] for a in actions] + [EOS]


def decode_actions(ids: Sequence[int]) -> List[str]:
    return [ACTION_VOCAB[i] for i in ids if i != EOS]


def scan_instance(command: str, actions: Sequence[str]) -> TaskInstance:
    inputs = encode_command(command)
    L = inputs.shape[0]
    return TaskInstance(
        inputs=inputs,
        target=encode_actions(actions),
        loss_window=(L - 1, L),
        meta={"command": command, "actions": " ".join(actions)},
    )


def simple_split_indices(n: int, split_fraction: float, seed: int) -> Tuple[List[int], List[int]]:
    """随机划分，返回排序后的训练/测试索引"""
    if not 0.0 < split_fraction < 1.0:
        raise InvalidConfigurationError(f"split_fraction must lie in (0, 1), got {split_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(split_fraction * n))
    return sorted(int(i) for i in perm[:n_train]), sorted(int(i) for i in perm[n_train:])


def gen_scan_simple_split(split_fraction: float = 0.8, seed: int = 0) -> TaskDataset:
    """SCAN simple split：全部指令-动作对随机 80/20 划分"""
    corpus = scan_enumerate()
    train_idx, test_idx = simple_split_indices(len(corpus), split_fraction, seed)
    instances = [scan_instance(cmd, acts) for cmd, acts in corpus]
    logger.info(f"SCAN simple split: {len(train_idx)} train / {len(test_idx)} test commands")
    return TaskDataset(
        descriptor=TaskDescriptor(name=TaskName.SCAN, params={"split_fraction": split_fraction}, seed=seed),
        train=[instances[i] for i in train_idx],
        test=[instances[i] for i in test_idx],
        input_dim=len(COMMAND_VOCAB),
        output_dim=len(ACTION_VOCAB),
        loss=LossSpec(kind=LossKind.WINDOW_CROSS_ENTROPY),
    )


# ---------------------------------------------------------------------------
# 编码器-解码器推理
# ---------------------------------------------------------------------------

class DecodeResult(NamedTuple):
    """解码结果；truncated 表示达到步数上限仍未输出结束符"""
    actions: List[str]
    token_ids: List[int]
    truncated: bool


def pad_commands(instances: Sequence[TaskInstance]) -> Tuple[np.ndarray, np.ndarray]:
    """右侧补零到同一长度，返回输入 (B, L, K) 与有效步掩码 (B, L)"""
    L = max(inst.T for inst in instances)
    K = instances[0].K
    S = np.zeros((len(instances), L, K))
    active = np.zeros((len(instances), L), dtype=bool)
    for b, inst in enumerate(instances):
        S[b, :inst.T] = inst.inputs
        active[b, :inst.T] = True
    return S, active


def encode_batch(enc: ModelParams, instances: Sequence[TaskInstance]) -> np.ndarray:
    """编码器末状态 (B, M)，作为解码器初始状态（恒等映射）"""
    S, active = pad_commands(instances)
    return rollout_batch(enc, None, S, active)[:, -1]


def decode_free(dec: ModelParams, readout: Readout, Z0: np.ndarray, cap: int) -> List[DecodeResult]:
    """解码器零输入自由运行，逐步取 argmax，直到结束符或达到上限"""
    if dec.M != Z0.shape[1]:
        raise InvalidConfigurationError(f"decoder M={dec.M} does not match encoder state size {Z0.shape[1]}")
    B = Z0.shape[0]
    Z = Z0
    tokens = np.zeros((B, cap), dtype=np.int64)
    for t in range(cap):
        Z = step_batch(dec, Z)
        tokens[:, t] = np.argmax(Z @ readout.D.T + readout.bias, axis=1)
    results: List[DecodeResult] = []
    for row in tokens:
        stops = np.flatnonzero(row == EOS)
        if stops.size:
            ids = [int(i) for i in row[:stops[0]]]
            results.append(DecodeResult(decode_actions(ids), ids, False))
        else:
            ids = [int(i) for i in row]
            results.append(DecodeResult(decode_actions(ids), ids, True))
    return results


def encode_decode_rollout(
    enc: ModelParams,
    dec: ModelParams,
    readout: Readout,
    command: Union[str, Sequence[str]],
    cap: int = 64,
) -> DecodeResult:
    """单条指令：编码器读入 one-hot 指令，末状态作为解码器初态自由解码"""
    instance = scan_instance(" ".join(tokenize(command)), [])
    result = decode_free(dec, readout, encode_batch(enc, [instance]), cap)[0]
    if result.truncated:
        logger.warning(f"Decoding of {command!r} hit the {cap}-step cap without an end token")
    return result
