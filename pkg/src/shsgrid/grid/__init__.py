from .assemble import AssemblyError, assemble_system, build_system, default_network, default_params
from .blocks import GFL_INPUTS, GFL_STATES, UnstableBlockError, build_gfl_block, build_swing_block
from .kron import CouplingMatrix, kron_reduce
from .network import (BusNetwork, IslandingError, NetworkFormatError, NetworkValidationError, load_network,
                      parse_network)
from .params import GflParams, ModelParams, OperatingPoint, ParameterError, SwingParams, load_params
