from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from joblib import Parallel, delayed

from domain.model.aggregates.design_matrix import CandidateStep, DesignMatrix
from domain.model.aggregates.panel_dataset import PanelDataset
from domain.model.aggregates.selection import GetsOutcome, SelectionConfig, SelectionResult, TraceRecord
from domain.model.exceptions import DegreesOfFreedomError
from domain.model.valueobjects.indicator_kind import IndicatorKind
from domain.services.design_builder import attach_candidates, build_forced, candidates_for, indicator_block
from domain.services.least_squares import ForcedProjection, PartialFit, fit_ols, fit_partialled, response_scale

logger = logging.getLogger(__name__)

ALIAS_WEIGHT = 1e-6


def _path_search(
        y_residual: np.ndarray,
        x_residual: np.ndarray,
        norms: np.ndarray,
        absorbed_rank: int,
        scale: float,
        gamma: float,
        max_paths: int
) -> Tuple[Tuple[int, ...], Tuple[float, ...], int, int]:
    """Multi-path backward elimination over the columns of `x_residual`.

    Returns (surviving column indices, opening p-values, number of terminal models, number of fits).
    Columns must already be in canonical candidate order so index tuples compare lexicographically.
    """
    cache: Dict[Tuple[int, ...], PartialFit] = {}

    def fit(subset: Tuple[int, ...]) -> PartialFit:
        if subset not in cache:
            index = list(subset)
            cache[subset] = fit_partialled(
                y_residual, x_residual[:, index], norms[index], absorbed_rank, scale
            )
        return cache[subset]

    k = x_residual.shape[1]
    full = tuple(range(k))
    opening = fit(full)
    if k == 0:
        return (), (), 1, 1
    opening_p = tuple(float(p) for p in opening.p_values)

    insignificant = [i for i in full if opening_p[i] >= gamma]
    if not insignificant:
        return full, opening_p, 1, len(cache)

    starts = sorted(insignificant, key=lambda i: (-opening_p[i], i))[:max_paths]
    # an aliased set has several exact representations; start from each partner too
    starts += [i for i in _alias_partners(x_residual, opening.aliased) if i not in starts]
    terminals: Dict[Tuple[int, ...], float] = {}
    for first in starts:
        current = tuple(i for i in full if i != first)
        while current:
            p = fit(current).p_values
            worst = max(range(len(current)), key=lambda m: (p[m], current[m]))
            if p[worst] < gamma:
                break
            current = current[:worst] + current[worst + 1:]
        terminals[current] = fit(current).information_criterion

    best = min(terminals, key=lambda subset: (terminals[subset], len(subset), subset))
    return best, opening_p, len(terminals), len(cache)


def _alias_partners(x_residual: np.ndarray, aliased: Sequence[int]) -> List[int]:
    """Columns entering the linear dependencies of the aliased columns"""
    if not aliased:
        return []
    others = [i for i in range(x_residual.shape[1]) if i not in set(aliased)]
    if not others:
        return []
    weights = np.linalg.lstsq(x_residual[:, others], x_residual[:, list(aliased)], rcond=None)[0]
    involved = np.abs(weights).max(axis=1) > ALIAS_WEIGHT
    return [others[m] for m in np.flatnonzero(involved)]


def _block_job(
        block_id: int,
        y_residual: np.ndarray,
        x_residual: np.ndarray,
        norms: np.ndarray,
        absorbed_rank: int,
        scale: float,
        gamma: float,
        max_paths: int
) -> Tuple[int, Tuple[int, ...], Tuple[float, ...], int]:
    survivors, opening_p, _, fits = _path_search(
        y_residual, x_residual, norms, absorbed_rank, scale, gamma, max_paths
    )
    return block_id, survivors, opening_p, fits


class SaturationService:
    """Indicator saturation: random blocks, multi-path general-to-specific elimination, union iterations"""

    @staticmethod
    def partition_blocks(
            candidates: Sequence[CandidateStep],
            config: SelectionConfig
    ) -> List[List[CandidateStep]]:
        """Seeded shuffle then consecutive chunks of block_size; each block sorted canonically"""
        ordered = sorted(candidates)
        if not ordered:
            return []
        rng = np.random.default_rng(config.seed)
        shuffled = [ordered[i] for i in rng.permutation(len(ordered))]
        return [
            sorted(shuffled[start:start + config.block_size])
            for start in range(0, len(shuffled), config.block_size)
        ]

    def gets_select(
            self,
            dataset: PanelDataset,
            forced: DesignMatrix,
            candidates: Sequence[CandidateStep],
            config: SelectionConfig,
            stage: str = "gets",
            iteration: int = 0,
            block_id: Optional[int] = None
    ) -> GetsOutcome:
        """General-to-specific selection of `candidates` on top of every column of `forced`"""
        ordered = sorted(set(candidates))
        held = forced.matrix
        projection = ForcedProjection(held)
        y_residual = projection.residualize(forced.response)
        raw = indicator_block(dataset, ordered)
        survivors, opening_p, terminals, fits = _path_search(
            y_residual,
            projection.residualize(raw),
            np.linalg.norm(raw, axis=0),
            projection.rank,
            response_scale(forced.response),
            config.gamma,
            config.max_paths,
        )
        kept = tuple(ordered[i] for i in survivors)
        record = TraceRecord(stage, iteration, block_id, tuple(ordered), kept, opening_p)
        return GetsOutcome(survivors=kept, record=record, terminals=terminals, fits=fits)

    def sis_search(self, dataset: PanelDataset, config: SelectionConfig) -> SelectionResult:
        """Step indicator saturation (or steps and impulses together when indicator_kind is BOTH)"""
        if config.indicator_kind == IndicatorKind.IMPULSE:
            config = config.with_(indicator_kind=IndicatorKind.STEP)
        return self._search(dataset, config)

    def iis_search(self, dataset: PanelDataset, config: SelectionConfig) -> SelectionResult:
        return self._search(dataset, config.with_(indicator_kind=IndicatorKind.IMPULSE))

    def search(self, dataset: PanelDataset, config: SelectionConfig) -> SelectionResult:
        return self._search(dataset, config)

    def _search(self, dataset: PanelDataset, config: SelectionConfig) -> SelectionResult:
        label = dataset.series_key.label
        candidates = candidates_for(dataset, config.indicator_kind)
        forced = build_forced(dataset)
        y = forced.response
        scale = response_scale(y)
        column_of = {c: i for i, c in enumerate(candidates)}
        raw = indicator_block(dataset, candidates)
        norms = np.linalg.norm(raw, axis=0)
        blocks = self.partition_blocks(candidates, config)

        logger.info(
            f"[{label}] {config.indicator_kind.value} saturation: {len(candidates)} candidates "
            f"in {len(blocks)} blocks (gamma={config.gamma}, block_size={config.block_size}, seed={config.seed})"
        )

        trace: List[TraceRecord] = []
        history: List[Tuple[CandidateStep, ...]] = []
        retained: Tuple[CandidateStep, ...] = ()
        converged = False
        iteration = 0

        for iteration in range(1, config.max_outer_iterations + 1):
            held = forced.forced
            if retained:
                held = np.hstack([held, raw[:, [column_of[c] for c in retained]]])
            projection = ForcedProjection(held)
            y_residual = projection.residualize(y)

            # Bloques fijos; los retenidos entran como regresores
            retained_set = set(retained)
            jobs = []
            for block_id, block in enumerate(blocks):
                members = [c for c in block if c not in retained_set]
                if not members:
                    continue
                cols = [column_of[c] for c in members]
                jobs.append((block_id, members, cols))

            outcomes = Parallel(n_jobs=config.n_jobs)(
                delayed(_block_job)(
                    block_id,
                    y_residual,
                    projection.residualize(raw[:, cols]),
                    norms[cols],
                    projection.rank,
                    scale,
                    config.gamma,
                    config.max_paths,
                )
                for block_id, _, cols in jobs
            )

            block_survivors: List[CandidateStep] = []
            for (block_id, members, _), (_, survivors, opening_p, _) in zip(jobs, outcomes):
                kept = tuple(members[i] for i in survivors)
                block_survivors.extend(kept)
                trace.append(TraceRecord("block", iteration, block_id, tuple(members), kept, opening_p))

            union = tuple(sorted(set(block_survivors) | retained_set))
            history.append(union)
            selected = self._select_union(dataset, forced, union, config, iteration, trace)

            logger.info(
                f"[{label}] iteration {iteration}: {len(block_survivors)} block survivors, "
                f"union {len(union)}, retained {len(selected)}"
            )
            if selected == retained:
                converged = True
                break
            retained = selected

        if not converged:
            logger.warning(
                f"[{label}] selection did not converge after {config.max_outer_iterations} iterations; "
                f"returning the last retained set ({len(retained)} indicators)"
            )

        final_fit = fit_ols(attach_candidates(dataset, forced, retained))
        return SelectionResult(
            retained=retained,
            config=config,
            converged=converged,
            iterations=iteration,
            trace=tuple(trace),
            union_history=tuple(history),
            final_fit=final_fit,
            n_candidates=len(candidates),
        )

    def _select_union(
            self,
            dataset: PanelDataset,
            forced: DesignMatrix,
            union: Tuple[CandidateStep, ...],
            config: SelectionConfig,
            iteration: int,
            trace: List[TraceRecord]
    ) -> Tuple[CandidateStep, ...]:
        """Joint selection over the pooled block survivors, re-blocking while they exceed the degrees of freedom"""
        if not union:
            return ()
        capacity = forced.n_rows - len(forced.forced_columns) - 1
        pool = list(union)
        while len(pool) > capacity:
            sub_blocks = self.partition_blocks(pool, config)
            shrunk: List[CandidateStep] = []
            for block_id, block in enumerate(sub_blocks):
                outcome = self.gets_select(dataset, forced, block, config, "reblock", iteration, block_id)
                trace.append(outcome.record)
                shrunk.extend(outcome.survivors)
            if len(shrunk) >= len(pool):
                raise DegreesOfFreedomError(forced.n_rows, len(forced.forced_columns) + len(shrunk))
            pool = sorted(shrunk)

        outcome = self.gets_select(dataset, forced, pool, config, "union", iteration)
        trace.append(outcome.record)
        return outcome.survivors
