# Copyright 2025 The tailmap Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Error types raised by tailmap, with the process exit code of each."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4
EXIT_DATA = 5
EXIT_INTEGRITY = 6


class TailmapError(Exception):
    exit_code = 1


class ConfigError(TailmapError, ValueError):
    """An invalid config field, flag or request parameter."""
    exit_code = EXIT_CONFIG

    def __init__(self, field: str, message: str):
        super().__init__(f'{field}: {message}')
        self.field = field


class InfeasibleError(TailmapError, ValueError):
    """The requested target cannot be met with the available samples."""
    exit_code = EXIT_INFEASIBLE


class TargetAboveTailError(InfeasibleError):
    """zeta exceeds 1 - rho, so the target is met at the threshold already."""


class NumericalError(TailmapError, ArithmeticError):
    exit_code = EXIT_NUMERICAL


class DisjointSupportError(NumericalError):
    pass


class DataError(TailmapError, ValueError):
    """Samples that cannot support the requested estimate."""
    exit_code = EXIT_DATA


class OutsideTailError(DataError):
    """A target below the threshold, where the tail model does not apply."""


class IntegrityError(TailmapError, ValueError):
    exit_code = EXIT_INTEGRITY
