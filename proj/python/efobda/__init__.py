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
# =============================================================================
"""Python bindings for the efobda simulation core."""

import json as _json

from ._efobda import *  # noqa: F401,F403
from ._efobda import simulate as _simulate


def simulate_config(config):
    """Run a config given as a dict or JSON string."""
    if not isinstance(config, str):
        config = _json.dumps(config)
    return _simulate(config)
