# Logging
DEFAULT_LOG_LEVEL = "INFO"

# Artifact file names (relative to the output directory)
EVENTS_FILENAME = "events.jsonl"
MANIFEST_FILENAME = "manifest.json"
CONFIG_FLAT_FILENAME = "config_flat.yaml"
LOG_FILENAME = "pipeline.log"
DESIGN_FILENAME = "design.txt"
DATASET_DIRNAME = "dataset"
WEIGHTS_FILENAME = "weights.nn"
TRAIN_REPORT_FILENAME = "train_report.txt"
CERT_REPORT_FILENAME = "cert_report.txt"
INDICATOR_LOG_FILENAME = "indicator_log.csv"
TIMING_FILENAME = "timing.txt"
FIGURES_DIRNAME = "figures"

# Shard naming
SHARD_PREFIX = "part-"
SHARD_PAD = 4  # part-0000.csv
SHARD_SUFFIX = ".csv"

# Run identifiers
RUN_PREFIX = "run_"

# Weights file format tag
WEIGHTS_FORMAT = "ampcnn-v1"

# CLI exit codes
EXIT_OK = 0
EXIT_DESIGN_INFEASIBLE = 2
EXIT_TRAINING_DIVERGED = 3
EXIT_CERTIFICATION_FAILED = 4
EXIT_IO = 5
