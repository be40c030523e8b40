"""Shared synthetic-data builders for the test suite."""

import numpy as np
import pandas as pd
import pytest

from lmeffects.panel import COLUMNS, PanelDataset


def build_panel(
    periods,
    cutover,
    effects=None,
    n_per_arm=120,
    arms=("control", "d20", "d50"),
    strata=("user", "nonuser"),
    outcomes=("integrated", "nonintegrated"),
    log_mean=0.2,
    log_sd=0.6,
    seed=0,
):
    """Long-format panel whose treated cells follow a planted
    location-scale shift of the control distribution.

    ``effects`` maps (outcome, period, discount_arm, stratum) to
    (alpha, sigma); missing keys and all pre-cutover periods are null.
    Counts are i.i.d. log-normal draws per record, so every cell is a
    clean two-sample problem.
    """
    effects = effects or {}
    rng = np.random.default_rng(seed)
    blocks = []
    for arm in arms:
        for stratum in strata:
            units = np.array(
                [f"{arm}-{stratum}-{i:04d}" for i in range(n_per_arm)]
            )
            for outcome in outcomes:
                for period in periods:
                    alpha, sigma = 0.0, 1.0
                    if arm != "control" and period >= cutover:
                        alpha, sigma = effects.get(
                            (outcome, period, arm, stratum), (0.0, 1.0)
                        )
                    counts = alpha + sigma * rng.lognormal(
                        log_mean, log_sd, n_per_arm
                    )
                    blocks.append(
                        pd.DataFrame(
                            {
                                "unit_id": units,
                                "arm": arm,
                                "stratum": stratum,
                                "period": period,
                                "outcome_type": outcome,
                                "count": counts,
                            }
                        )
                    )
    return PanelDataset(pd.concat(blocks, ignore_index=True)[COLUMNS])


@pytest.fixture
def panel_builder():
    return build_panel
