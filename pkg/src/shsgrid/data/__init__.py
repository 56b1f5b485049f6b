from .dataset import (Dataset, DatasetFormatError, FingerprintMismatch, export_csv, read_dataset, split_dataset,
                      write_dataset)
from .scenarios import (DEFAULT_FEATURES, SENSOR_SCALES, ContingencySpec, GenConfig, InadmissibleContingency,
                        InputSpec, ScenarioLibrary, admissible_lines, apply_measurement, apply_physical,
                        feature_matrix, generate_dataset, run_window, simulate_window)
