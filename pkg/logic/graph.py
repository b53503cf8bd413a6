"""
骨架图

构建全身关键点的时空骨架图，把它裁剪成手语识别用的27节点图，
并生成图卷积使用的归一化、分区邻接矩阵。

图结构构建之后不可修改，可以在线程间直接共享。
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from logic.constants import WHOLEBODY_LAYOUT_FILE, SLR_SELECTION_FILE
from logic.errors import GraphError

logger = logging.getLogger('graph')

PARTITION_STRATEGIES = ("uniform", "spatial")


@dataclass(frozen=True)
class LayoutDescriptor:
    """布局文件解析结果（尚未校验拓扑）"""
    num_nodes: int
    node_labels: Tuple[str, ...]
    edges: Tuple[Tuple[int, int], ...]
    bones: Tuple[Tuple[int, int], ...] = ()
    root: int = 0
    source: str = "<memory>"


@dataclass(frozen=True)
class SkeletonGraph:
    """骨架图：节点、无向边、以根节点为根的骨骼树"""
    num_nodes: int
    edges: FrozenSet[Tuple[int, int]]
    bones: Tuple[Tuple[int, int], ...]
    root: int
    node_labels: Tuple[str, ...]

    @cached_property
    def adjacency(self) -> np.ndarray:
        """0/1 邻接矩阵 A，A[i, j] = 1 当且仅当 i、j 相距一跳"""
        A = np.zeros((self.num_nodes, self.num_nodes))
        for i, j in self.edges:
            A[i, j] = 1.0
            A[j, i] = 1.0
        A.setflags(write=False)
        return A

    @cached_property
    def hop_distance(self) -> np.ndarray:
        return hop_distance_matrix(self)

    @cached_property
    def parents(self) -> Dict[int, int]:
        """骨骼树中每个非根节点的 source 节点"""
        return {dst: src for src, dst in self.bones}

    def index_of(self, label: str) -> int:
        try:
            return self.node_labels.index(label)
        except ValueError:
            raise GraphError(f"图中没有名为 {label} 的节点", "GRAPH_UNKNOWN_NODE")


@dataclass(frozen=True)
class NodeSelection:
    """裁剪时保留的节点（全图编号，升序）以及补充边"""
    kept_indices: Tuple[int, ...]
    edge_overrides: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if len(set(self.kept_indices)) != len(self.kept_indices):
            raise GraphError("保留节点编号有重复", "GRAPH_SELECTION_DUPLICATE")
        if list(self.kept_indices) != sorted(self.kept_indices):
            raise GraphError("保留节点编号必须升序排列", "GRAPH_SELECTION_ORDER")


@dataclass(frozen=True)
class NormalizedAdjacency:
    """归一化邻接矩阵，partitions 形状为 (K, N, N)"""
    partitions: np.ndarray = field(repr=False)
    partition_strategy: str = "uniform"

    @property
    def num_partitions(self) -> int:
        return self.partitions.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.partitions.shape[1]


# ---------------------------------------------------------------------------
# 布局文件
# ---------------------------------------------------------------------------

def _parse_int(token: str, line_no: int, source: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise GraphError(f"{source}:{line_no} 无法解析整数 '{token}'", "GRAPH_PARSE")


def parse_layout_text(text: str, source: str = "<memory>") -> LayoutDescriptor:
    """解析 `node/edge/bone/root` 行格式的布局文本"""
    labels: Dict[int, str] = {}
    edges: List[Tuple[int, int]] = []
    bones: List[Tuple[int, int]] = []
    root = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        keyword = parts[0]
        if keyword == "node":
            if len(parts) < 2:
                raise GraphError(f"{source}:{line_no} node 行缺少编号", "GRAPH_PARSE")
            idx = _parse_int(parts[1], line_no, source)
            if idx in labels:
                raise GraphError(f"{source}:{line_no} 节点 {idx} 重复定义", "GRAPH_DUPLICATE_NODE")
            labels[idx] = parts[2] if len(parts) > 2 else f"node_{idx}"
        elif keyword in ("edge", "bone"):
            if len(parts) != 3:
                raise GraphError(f"{source}:{line_no} {keyword} 行需要两个编号", "GRAPH_PARSE")
            pair = (_parse_int(parts[1], line_no, source), _parse_int(parts[2], line_no, source))
            (edges if keyword == "edge" else bones).append(pair)
        elif keyword == "root":
            if len(parts) != 2:
                raise GraphError(f"{source}:{line_no} root 行需要一个编号", "GRAPH_PARSE")
            root = _parse_int(parts[1], line_no, source)
        else:
            raise GraphError(f"{source}:{line_no} 未知关键字 '{keyword}'", "GRAPH_PARSE")

    num_nodes = len(labels)
    if sorted(labels) != list(range(num_nodes)):
        raise GraphError(f"{source}: 节点编号必须是 0..{num_nodes - 1} 的连续整数", "GRAPH_NODE_RANGE")

    return LayoutDescriptor(
        num_nodes=num_nodes,
        node_labels=tuple(labels[i] for i in range(num_nodes)),
        edges=tuple(edges),
        bones=tuple(bones),
        root=0 if root is None else root,
        source=source,
    )


def load_layout(path) -> SkeletonGraph:
    """读取布局文件并构建骨架图"""
    path = Path(path)
    if not path.exists():
        raise GraphError(f"布局文件不存在: {path}", "GRAPH_FILE_MISSING")
    layout = parse_layout_text(path.read_text(encoding='utf-8'), source=str(path))
    return build_full_graph(layout)


def load_selection(path) -> NodeSelection:
    """读取节点选择文件：node 行为保留节点，edge 行为补充边"""
    path = Path(path)
    if not path.exists():
        raise GraphError(f"节点选择文件不存在: {path}", "GRAPH_FILE_MISSING")
    kept: List[int] = []
    overrides: List[Tuple[int, int]] = []
    for line_no, raw in enumerate(path.read_text(encoding='utf-8').splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "node" and len(parts) >= 2:
            kept.append(_parse_int(parts[1], line_no, str(path)))
        elif parts[0] == "edge" and len(parts) == 3:
            overrides.append((_parse_int(parts[1], line_no, str(path)),
                              _parse_int(parts[2], line_no, str(path))))
        else:
            raise GraphError(f"{path}:{line_no} 无法解析的选择行 '{line}'", "GRAPH_PARSE")
    return NodeSelection(kept_indices=tuple(sorted(kept)), edge_overrides=tuple(overrides))


# ---------------------------------------------------------------------------
# 图构建
# ---------------------------------------------------------------------------

def _bfs_tree(num_nodes: int, edges, root: int) -> Tuple[Tuple[int, int], ...]:
    """根节点所在连通分量的广度优先树"""
    neighbors = [[] for _ in range(num_nodes)]
    for i, j in sorted(edges):
        neighbors[i].append(j)
        neighbors[j].append(i)
    seen = {root}
    queue = deque([root])
    bones = []
    while queue:
        u = queue.popleft()
        for v in sorted(neighbors[u]):
            if v not in seen:
                seen.add(v)
                bones.append((u, v))
                queue.append(v)
    return tuple(sorted(bones, key=lambda b: b[1]))


def _check_bone_tree(num_nodes: int, edges: FrozenSet[Tuple[int, int]],
                     bones: Sequence[Tuple[int, int]], root: int, source: str):
    parents: Dict[int, int] = {}
    for src, dst in bones:
        if not (0 <= src < num_nodes and 0 <= dst < num_nodes):
            raise GraphError(f"{source}: 骨骼 ({src}, {dst}) 编号越界", "GRAPH_NODE_RANGE")
        if (min(src, dst), max(src, dst)) not in edges:
            raise GraphError(f"{source}: 骨骼 ({src}, {dst}) 没有对应的边", "GRAPH_BONE_NOT_EDGE")
        if dst == root:
            raise GraphError(f"{source}: 根节点 {root} 不能作为骨骼终点", "GRAPH_BONE_TREE")
        if dst in parents:
            raise GraphError(f"{source}: 节点 {dst} 有多个 source", "GRAPH_BONE_TREE")
        parents[dst] = src

    missing = [v for v in range(num_nodes) if v != root and v not in parents]
    if missing:
        raise GraphError(f"{source}: 节点 {missing[:5]} 没有 source，骨骼不是树", "GRAPH_BONE_TREE")

    # 每个节点沿 source 向上必须在 N 步内到达根节点
    for v in range(num_nodes):
        u, steps = v, 0
        while u != root:
            u = parents[u]
            steps += 1
            if steps > num_nodes:
                raise GraphError(f"{source}: 骨骼中存在环（经过节点 {v}）", "GRAPH_BONE_TREE")


def build_full_graph(layout: LayoutDescriptor, expected_nodes: Optional[int] = None) -> SkeletonGraph:
    """
    由布局描述构建骨架图，A[i, j] = 1 当且仅当两个节点在自然连接中相距一跳

    Args:
        layout: 布局描述
        expected_nodes: 期望的节点数（例如全身布局为133），None 表示不检查

    Raises:
        GraphError: 重复边、自环、编号越界、骨骼不是树
    """
    n = layout.num_nodes
    if n < 1:
        raise GraphError(f"{layout.source}: 布局中没有节点", "GRAPH_EMPTY")
    if expected_nodes is not None and n != expected_nodes:
        raise GraphError(f"{layout.source}: 期望 {expected_nodes} 个节点，实际 {n} 个", "GRAPH_NODE_COUNT")
    if not 0 <= layout.root < n:
        raise GraphError(f"{layout.source}: 根节点 {layout.root} 越界", "GRAPH_NODE_RANGE")

    edges = set()
    for i, j in layout.edges:
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"{layout.source}: 边 ({i}, {j}) 编号越界", "GRAPH_NODE_RANGE")
        if i == j:
            raise GraphError(f"{layout.source}: 边 ({i}, {j}) 是自环", "GRAPH_SELF_LOOP")
        key = (min(i, j), max(i, j))
        if key in edges:
            raise GraphError(f"{layout.source}: 边 ({i}, {j}) 重复", "GRAPH_DUPLICATE_EDGE")
        edges.add(key)
    edges = frozenset(edges)

    if layout.bones:
        _check_bone_tree(n, edges, layout.bones, layout.root, layout.source)
        bones = tuple(sorted(layout.bones, key=lambda b: b[1]))
    else:
        bones = _bfs_tree(n, edges, layout.root)

    graph = SkeletonGraph(
        num_nodes=n,
        edges=edges,
        bones=bones,
        root=layout.root,
        node_labels=layout.node_labels,
    )
    logger.debug(f"构建骨架图: {n}个节点, {len(edges)}条边, {len(bones)}根骨骼 ({layout.source})")
    return graph


def graph_from_edges(num_nodes: int, edges, bones=(), root: int = 0, labels=None) -> SkeletonGraph:
    """由边列表直接构建骨架图"""
    layout = LayoutDescriptor(
        num_nodes=num_nodes,
        node_labels=tuple(labels) if labels else tuple(f"node_{i}" for i in range(num_nodes)),
        edges=tuple(tuple(e) for e in edges),
        bones=tuple(tuple(b) for b in bones),
        root=root,
    )
    return build_full_graph(layout)


# ---------------------------------------------------------------------------
# 距离
# ---------------------------------------------------------------------------

def hop_distance_matrix(graph: SkeletonGraph, max_hop: Optional[int] = None) -> np.ndarray:
    """
    计算节点间的最短跳数，不可达为 inf

    Args:
        max_hop: 最多扩展的跳数，None 表示直到不再有新节点可达
    """
    n = graph.num_nodes
    A = graph.adjacency > 0
    hop_dis = np.full((n, n), np.inf)
    np.fill_diagonal(hop_dis, 0)
    reached = np.eye(n, dtype=bool)
    frontier = np.eye(n, dtype=bool)
    limit = n - 1 if max_hop is None else max_hop
    for d in range(1, limit + 1):
        frontier = (frontier.astype(np.int64) @ A.astype(np.int64) > 0) & ~reached
        if not frontier.any():
            break
        hop_dis[frontier] = d
        reached |= frontier
    return hop_dis


def node_distance(graph: SkeletonGraph, i: int, j: int) -> int:
    """两个节点之间的最短跳数"""
    n = graph.num_nodes
    if not (0 <= i < n and 0 <= j < n):
        raise GraphError(f"节点编号 ({i}, {j}) 越界（共 {n} 个节点）", "GRAPH_NODE_RANGE")
    d = graph.hop_distance[i, j]
    if not np.isfinite(d):
        raise GraphError(f"节点 {i} 与 {j} 不连通", "GRAPH_UNREACHABLE")
    return int(d)


def neighborhood_mask(graph: SkeletonGraph, hops: int) -> np.ndarray:
    """距离不超过 hops 的节点对（含自身）"""
    return graph.hop_distance <= hops


def is_connected(graph: SkeletonGraph) -> bool:
    return bool(np.isfinite(graph.hop_distance[graph.root]).all())


# ---------------------------------------------------------------------------
# 图裁剪
# ---------------------------------------------------------------------------

def reduce_graph(graph: SkeletonGraph, selection: NodeSelection) -> SkeletonGraph:
    """
    保留 selection 中的节点，边 = 诱导边 + 补充边

    新图中节点 k 对应原图节点 selection.kept_indices[k]。
    骨骼树取每个节点最近的保留祖先作为 source；如果这样的连接不在新图的边中，
    退化为新图上从根出发的广度优先树。
    """
    kept = selection.kept_indices
    if not kept:
        raise GraphError("节点选择为空", "GRAPH_EMPTY")
    for idx in kept:
        if not 0 <= idx < graph.num_nodes:
            raise GraphError(f"保留节点 {idx} 越界（原图 {graph.num_nodes} 个节点）", "GRAPH_NODE_RANGE")
    if graph.root not in kept:
        raise GraphError(f"根节点 {graph.root} 必须被保留", "GRAPH_ROOT_REMOVED")

    remap = {old: new for new, old in enumerate(kept)}
    edges = set()
    for i, j in graph.edges:
        if i in remap and j in remap:
            edges.add((min(remap[i], remap[j]), max(remap[i], remap[j])))
    for i, j in selection.edge_overrides:
        if i not in remap or j not in remap:
            raise GraphError(f"补充边 ({i}, {j}) 连接了未保留的节点", "GRAPH_OVERRIDE_INVALID")
        if i == j:
            raise GraphError(f"补充边 ({i}, {j}) 是自环", "GRAPH_SELF_LOOP")
        edges.add((min(remap[i], remap[j]), max(remap[i], remap[j])))
    edges = frozenset(edges)

    n = len(kept)
    new_root = remap[graph.root]
    induced = SkeletonGraph(n, edges, (), new_root, tuple(graph.node_labels[i] for i in kept))
    if not is_connected(induced):
        unreachable = [kept[k] for k in np.flatnonzero(~np.isfinite(induced.hop_distance[new_root]))]
        raise GraphError(f"裁剪后的图不连通，无法到达原图节点 {unreachable[:5]}", "GRAPH_DISCONNECTED")

    bones = []
    parents = graph.parents
    for old in kept:
        if old == graph.root:
            continue
        ancestor = parents.get(old)
        while ancestor is not None and ancestor not in remap:
            ancestor = parents.get(ancestor)
        if ancestor is None:
            bones = None
            break
        pair = (remap[ancestor], remap[old])
        if (min(pair), max(pair)) not in edges:
            bones = None
            break
        bones.append(pair)

    if bones is None:
        logger.warning("保留祖先之间缺少连接，骨骼树改用裁剪图上的广度优先树")
        bones = _bfs_tree(n, edges, new_root)

    reduced = SkeletonGraph(
        num_nodes=n,
        edges=edges,
        bones=tuple(sorted(bones, key=lambda b: b[1])),
        root=new_root,
        node_labels=induced.node_labels,
    )
    _check_bone_tree(n, edges, reduced.bones, new_root, "reduced graph")
    logger.info(f"图裁剪: {graph.num_nodes} -> {n} 个节点, {len(edges)} 条边")
    return reduced


@lru_cache(maxsize=None)
def default_full_graph() -> SkeletonGraph:
    """默认的133节点全身图"""
    layout = parse_layout_text(Path(WHOLEBODY_LAYOUT_FILE).read_text(encoding='utf-8'), WHOLEBODY_LAYOUT_FILE)
    return build_full_graph(layout, expected_nodes=133)


@lru_cache(maxsize=None)
def default_selection() -> NodeSelection:
    return load_selection(SLR_SELECTION_FILE)


@lru_cache(maxsize=None)
def default_slr_graph() -> SkeletonGraph:
    """默认的27节点手语识别图"""
    return reduce_graph(default_full_graph(), default_selection())


def mirror_pairs(graph: SkeletonGraph) -> List[Tuple[int, int]]:
    """根据 left_*/right_* 节点名得到左右对称的节点对"""
    pairs = []
    for i, label in enumerate(graph.node_labels):
        if label.startswith("left_"):
            partner = "right_" + label[len("left_"):]
            if partner in graph.node_labels:
                pairs.append((i, graph.node_labels.index(partner)))
    return pairs


def mirror_permutation(graph: SkeletonGraph) -> np.ndarray:
    """镜像时的节点置换（对合）"""
    perm = np.arange(graph.num_nodes)
    for i, j in mirror_pairs(graph):
        perm[i], perm[j] = j, i
    return perm


# ---------------------------------------------------------------------------
# 邻接矩阵归一化
# ---------------------------------------------------------------------------

def normalize_undigraph(A: np.ndarray) -> np.ndarray:
    """对称归一化 D^{-1/2} A D^{-1/2}"""
    Dl = np.sum(A, 0)
    Dn = np.zeros_like(Dl)
    Dn[Dl > 0] = Dl[Dl > 0] ** (-0.5)
    return Dn[:, None] * A * Dn[None, :]


def normalize_digraph(A: np.ndarray) -> np.ndarray:
    """按列归一化 A D^{-1}"""
    Dl = np.sum(A, 0)
    Dn = np.zeros_like(Dl)
    Dn[Dl > 0] = 1.0 / Dl[Dl > 0]
    return A * Dn[None, :]


def normalize_adjacency(graph: SkeletonGraph, strategy: str = "uniform",
                        center: Optional[int] = None) -> NormalizedAdjacency:
    """
    生成图卷积的归一化邻接算子

    uniform: 一个矩阵 D^{-1/2}(A+I)D^{-1/2}
    spatial: 三个分区（自身、靠近重心、远离重心），对 A+I 按列归一化后拆分，
             三个分区之和的支撑集与 uniform 算子相同。

    这里的重心不按坐标求质心，而是图上的一个节点，靠近 / 远离按到它的跳数判断。
    默认取根节点（默认图中是鼻子），需要别的约定时传入 center。

    Raises:
        GraphError: 未知的分区策略，center 越界
    """
    if strategy not in PARTITION_STRATEGIES:
        raise GraphError(f"未知的分区策略: {strategy}", "GRAPH_STRATEGY")
    n = graph.num_nodes
    if center is not None and not 0 <= center < n:
        raise GraphError(f"重心节点 {center} 越界（共 {n} 个节点）", "GRAPH_NODE_RANGE")
    A_hat = graph.adjacency + np.eye(n)

    if strategy == "uniform":
        partitions = normalize_undigraph(A_hat)[None]
    else:
        center = graph.root if center is None else center
        norm = normalize_digraph(A_hat)
        hop = graph.hop_distance
        a_root = np.zeros((n, n))
        a_close = np.zeros((n, n))
        a_far = np.zeros((n, n))
        to_center = hop[:, center]
        for i in range(n):
            for j in range(n):
                if A_hat[j, i] == 0:
                    continue
                if i == j:
                    a_root[j, i] = norm[j, i]
                elif to_center[j] == to_center[i] or not np.isfinite(to_center[i]):
                    a_root[j, i] = norm[j, i]
                elif to_center[j] > to_center[i]:
                    a_close[j, i] = norm[j, i]
                else:
                    a_far[j, i] = norm[j, i]
        partitions = np.stack([a_root, a_close, a_far])

    if np.isnan(partitions).any():
        raise GraphError("归一化邻接矩阵中出现 NaN", "GRAPH_NAN")
    partitions.setflags(write=False)
    return NormalizedAdjacency(partitions=partitions, partition_strategy=strategy)
