"""
グラフペアファイル・JSON成果物の読み書き
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Set, Tuple, Union

import numpy as np

from app.alignment.graph_model import AttributedGraph, AttributedGraphPair, ModelParams, Permutation
from app.alignment.refinement import RefinementResult
from app.alignment.tree_counting import PartialAlignment
from app.config import PAIR_FORMAT_HEADER, PAIR_SECTION_END, PAIR_SECTIONS
from app.shared.errors import AlignmentError, PairFormatError

# ログ設定
logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
NumberedLine = Tuple[int, str]


def format_pair(pair: AttributedGraphPair) -> str:
    """ペアを AGPAIR v1 形式のテキストに変換"""
    p = pair.params
    lines = [
        PAIR_FORMAT_HEADER,
        f"params {p.n} {p.m} {p.q_u!r} {p.rho_u!r} {p.q_a!r} {p.rho_a!r} {pair.seed}",
        "truth " + " ".join(str(v) for v in pair.truth.to_list()),
    ]
    sections = {
        "g1.uu": pair.g1.user_edges(),
        "g1.ua": pair.g1.attr_edges(),
        "g2.uu": pair.g2.user_edges(),
        "g2.ua": pair.g2.attr_edges(),
    }
    for name in PAIR_SECTIONS:
        lines.append(name)
        lines.extend(f"{i} {j}" for i, j in sections[name])
        lines.append(PAIR_SECTION_END)
    return "\n".join(lines) + "\n"


def write_pair(pair: AttributedGraphPair, path: PathLike) -> None:
    """ペアファイルを書き出す"""
    Path(path).write_text(format_pair(pair), encoding="utf-8")
    logger.info(f"Wrote pair file {path} (n={pair.n}, m={pair.m})")


def _parse_int(token: str, line_no: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise PairFormatError(f"line {line_no}: expected integer, got '{token}'")


def _parse_float(token: str, line_no: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise PairFormatError(f"line {line_no}: expected number, got '{token}'")


def _read_section(
    lines: List[NumberedLine], start: int, name: str, rows: int, cols: int, user_section: bool
) -> Tuple[np.ndarray, int]:
    """1セクション分の辺を読み、(行列, 次の位置) を返す"""
    if start >= len(lines):
        raise PairFormatError(f"missing section '{name}'")
    if lines[start][1] != name:
        raise PairFormatError(f"line {lines[start][0]}: expected section '{name}'")
    matrix = np.zeros((rows, cols), dtype=bool)
    seen: Set[Tuple[int, int]] = set()
    index = start + 1
    while index < len(lines):
        line_no, text = lines[index]
        if text == PAIR_SECTION_END:
            return matrix, index + 1
        tokens = text.split()
        if len(tokens) != 2:
            raise PairFormatError(f"line {line_no}: expected 'i j' in section {name}")
        i, j = _parse_int(tokens[0], line_no), _parse_int(tokens[1], line_no)
        if not (0 <= i < rows and 0 <= j < cols):
            raise PairFormatError(f"line {line_no}: index ({i}, {j}) out of range in {name}")
        if user_section and i >= j:
            raise PairFormatError(f"line {line_no}: user edges must satisfy i < j")
        if (i, j) in seen:
            raise PairFormatError(f"line {line_no}: duplicate edge ({i}, {j}) in {name}")
        seen.add((i, j))
        matrix[i, j] = True
        if user_section:
            matrix[j, i] = True
        index += 1
    raise PairFormatError(f"section {name} is missing its '{PAIR_SECTION_END}' line")


def parse_pair(text: str) -> AttributedGraphPair:
    """
    AGPAIR v1 テキストを厳密に解析

    重複辺は黙って統合せずエラーにする。空行は読み飛ばすが、
    エラーの行番号は元のテキストの行番号。
    """
    lines = [(no, line.strip()) for no, line in enumerate(text.splitlines(), start=1) if line.strip()]
    if not lines or lines[0][1] != PAIR_FORMAT_HEADER:
        raise PairFormatError(f"missing '{PAIR_FORMAT_HEADER}' header")
    if len(lines) < 3:
        raise PairFormatError("truncated pair file")

    line_no, params_line = lines[1]
    tokens = params_line.split()
    if len(tokens) != 8 or tokens[0] != "params":
        raise PairFormatError(f"line {line_no}: expected 'params n m q_u rho_u q_a rho_a seed'")
    n, m = _parse_int(tokens[1], line_no), _parse_int(tokens[2], line_no)
    q_u, rho_u, q_a, rho_a = (_parse_float(t, line_no) for t in tokens[3:7])
    seed = _parse_int(tokens[7], line_no)
    try:
        params = ModelParams(n=n, m=m, q_u=q_u, rho_u=rho_u, q_a=q_a, rho_a=rho_a)
    except AlignmentError as e:
        raise PairFormatError(f"line {line_no}: {e}")

    line_no, truth_line = lines[2]
    tokens = truth_line.split()
    if not tokens or tokens[0] != "truth":
        raise PairFormatError(f"line {line_no}: expected 'truth' line")
    images = [_parse_int(t, line_no) for t in tokens[1:]]
    if len(images) != n:
        raise PairFormatError(f"line {line_no}: truth has {len(images)} entries, expected {n}")
    try:
        truth = Permutation(np.array(images, dtype=np.int64))
    except AlignmentError as e:
        raise PairFormatError(f"line {line_no}: truth is not a bijection ({e})")

    index = 3
    matrices: Dict[str, np.ndarray] = {}
    for name in PAIR_SECTIONS:
        user_section = name.endswith(".uu")
        cols = n if user_section else m
        matrices[name], index = _read_section(lines, index, name, n, cols, user_section)
    if index != len(lines):
        raise PairFormatError(f"line {lines[index][0]}: unexpected trailing content")

    return AttributedGraphPair(
        g1=AttributedGraph.from_dense(matrices["g1.uu"], matrices["g1.ua"]),
        g2=AttributedGraph.from_dense(matrices["g2.uu"], matrices["g2.ua"]),
        truth=truth,
        params=params,
        seed=seed,
    )


def read_pair(path: PathLike) -> AttributedGraphPair:
    """ペアファイルを読み込む"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise PairFormatError(f"{path}: not UTF-8 text ({e})")
    pair = parse_pair(text)
    logger.info(f"Read pair file {path} (n={pair.n}, m={pair.m}, seed={pair.seed})")
    return pair


def partial_to_dict(partial: PartialAlignment) -> Dict:
    return {
        "matched": list(partial.matched),
        "map": {str(i): str(j) for i, j in sorted(partial.mapping.items())},
        "conflicts": list(partial.conflicts),
    }


def partial_from_dict(data: Dict) -> PartialAlignment:
    try:
        mapping = {int(i): int(j) for i, j in data["map"].items()}
        matched = [int(i) for i in data["matched"]]
        conflicts = [int(c) for c in data.get("conflicts", [])]
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise PairFormatError(f"malformed partial alignment JSON: {e}")
    if sorted(matched) != sorted(mapping):
        raise PairFormatError("'matched' does not agree with the keys of 'map'")
    try:
        return PartialAlignment.from_mapping(mapping, conflicts)
    except AlignmentError as e:
        raise PairFormatError(str(e))


def write_json(data: Dict, path: PathLike) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: PathLike) -> Dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise PairFormatError(f"{path}: invalid JSON ({e})")


def write_partial(partial: PartialAlignment, path: PathLike) -> None:
    write_json(partial_to_dict(partial), path)


def read_partial(path: PathLike) -> PartialAlignment:
    return partial_from_dict(read_json(path))


def refinement_to_dict(result: RefinementResult) -> Dict:
    """精緻化結果（未対応は null）"""
    return {
        "permutation": result.to_list(),
        "complete": result.complete,
        "extended": result.extended,
    }
