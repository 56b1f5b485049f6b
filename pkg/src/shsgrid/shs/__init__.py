from .analysis import (MomiVerdict, ResponseLibrary, expected_responses, momi_check, observability,
                       residual_classify)
from .dynamics import (DetectionSchedule, DiscreteModel, NoiseSpec, RationalInput, SimulationError, Trajectory,
                       discretize_zoh, initial_state, noise_streams, realize_input, simulate)
from .modes import Mode, ModeClass, ModeLibrary, load_library, save_library
