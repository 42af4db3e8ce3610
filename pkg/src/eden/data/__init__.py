from .vocabulary import BREAST_SURGERY, EVENT_TYPES, METASTATIC_DRUGS, VOCAB, Vocabulary, default_vocabulary
from .records import (
    CohortFormatError,
    CohortStats,
    EventLabel,
    PatientRecord,
    Visit,
    compute_stats,
    merge_consecutive,
    read_cohort,
    validate_record,
    write_cohort,
)
from .generator import GeneratorSpec, InfeasibleSpecError, generate_cohort, split_cohort
from .arrays import SequenceData, encode
