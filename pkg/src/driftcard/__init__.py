"""driftcard: WoE credit scorecards with macro-calibrated drift correction.

Stage 1 builds a point-in-time classifier over weight-of-evidence encoded
characteristics; stage 2 regresses the internal default series on an
exogenous macro series, forecasts the coming year's central tendency of
default under three scenarios, and shifts the scores to match it without
touching their ranking.
"""

from .binning import (
    Bin,
    BinningConfig,
    Characteristic,
    bin_nominal,
    build_interaction,
    compute_iv,
    compute_woe,
    encode,
    read_characteristics,
    supervised_bin,
    write_characteristics,
)
from .calibration import (
    CalibrationShift,
    DefaultSeries,
    DistanceResult,
    MacroSeries,
    RegressionFit,
    Scenario,
    apply_cutoff,
    distance_d,
    forecast_default,
    monthly_default_series,
    rank_predictors,
    repair_abnormal,
    shift_scores,
    shift_scores_by_month,
)
from .dataset import (
    Application,
    CleansingPolicy,
    CleansingReport,
    DatasetSchema,
    DEFAULT_SCHEMA,
    MonthOfYear,
    MonthRange,
    adjust_income,
    apply_cleansing,
    cleanse,
    parse_dataset,
    temporal_split,
    write_dataset,
)
from .evaluation import (
    CvResult,
    PsiReport,
    RocResult,
    auc,
    degradation,
    kfold_cv,
    psi,
    stratified_folds,
)
from .models import (
    LogisticConfig,
    LogisticModel,
    MonthlyEnsemble,
    StumpEnsemble,
    TrainingStrategy,
    clean_and_retrain,
    forward_select,
    monthly_ensemble,
    predict,
    read_model,
    train_adaboost,
    train_logistic,
    write_model,
)
from .scorecard import (
    CharacteristicSpec,
    Scorecard,
    characteristic_psi,
    encode_record,
    encode_records,
    fit_characteristics,
    forward_select_characteristics,
    make_trainer,
)
from .synthgen import (
    MacroSpec,
    PopulationSpec,
    generate_logistic_design,
    generate_macro,
    generate_population,
    generate_population_truth,
)

__version__ = "0.1.0"
