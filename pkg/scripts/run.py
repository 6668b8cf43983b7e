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

import dataclasses
import sys

from absl import app, flags, logging

from tailmap import cli
from tailmap import config as tailmap_config
from tailmap import errors
from tailmap import storage

# Define flags
FLAGS = flags.FLAGS

flags.DEFINE_string('config', None, 'Path to a scenario config.json.')
flags.DEFINE_string('preset', 'desk', 'Scenario preset used without --config.')
flags.DEFINE_integer('seed', None, 'Overrides the scenario seed.')
flags.DEFINE_string('out', None, 'Output directory.', required=True)
flags.DEFINE_float('zeta', None, 'Target outage probability.')
flags.DEFINE_float('rho', None, 'Tail fraction parameter of the threshold.')
flags.DEFINE_float('tau', None, 'Confidence level of the threshold margin.')
flags.DEFINE_float('delta', None, 'Meta-probability of the benchmark.')
flags.DEFINE_string('method', 'evt', 'Rate selection method.')
flags.DEFINE_string('dataset', None, 'Dataset directory written by generate.')
flags.DEFINE_string('maps', None, 'Map directory written by fit-maps.')
flags.DEFINE_string('rates', None, 'Rate directory written by allocate.')
flags.DEFINE_string('evals', None, 'Directory written by evaluate.')
flags.DEFINE_list('zetas', ['1e-3', '1e-4', '1e-5'], 'Sweep targets.')
flags.DEFINE_list('n_samples', ['1000', '10000', '100000'], 'Sweep N values.')
flags.DEFINE_list('seeds', ['0', '1', '2'], 'Sweep seeds.')
flags.DEFINE_bool('exact_outage', False,
                  'Score outage with the ground-truth fading law instead of '
                  'regenerated test samples.')

_SUBCOMMANDS = ['generate', 'fit-maps', 'allocate', 'evaluate', 'compare',
                'sweep']
_VALID_PRESETS = ['desk', 'paper']
_VALID_METHODS = [m.value for m in tailmap_config.Method]

flags.register_validator('preset', lambda p: p in _VALID_PRESETS,
                         message=f'Valid presets are: {_VALID_PRESETS}')
flags.register_validator('method', lambda m: m in _VALID_METHODS,
                         message=f'Valid methods are: {_VALID_METHODS}')


def _require(name: str):
    value = FLAGS[name].value
    if value is None:
        raise errors.ConfigError(name, f'--{name} is required here')
    return value


def _scenario_config() -> tailmap_config.ScenarioConfig:
    if FLAGS.config:
        try:
            raw = storage.read_json(FLAGS.config)
        except errors.DataError as e:
            raise errors.ConfigError('config', str(e)) from e
        scenario = tailmap_config.ScenarioConfig.from_dict(raw)
    else:
        scenario = tailmap_config.get_scenario_config(FLAGS.preset)
    overrides = {name: FLAGS[name].value
                 for name in ('seed', 'zeta', 'rho', 'tau', 'delta')
                 if FLAGS[name].value is not None}
    return dataclasses.replace(scenario, **overrides).validate()


def _run(subcommand: str):
    method = tailmap_config.Method(FLAGS.method)
    if subcommand == 'generate':
        cli.cmd_generate(_scenario_config(), FLAGS.out,
                         config_path=FLAGS.config or '')
    elif subcommand == 'fit-maps':
        cli.cmd_fit_maps(_require('dataset'), FLAGS.out, rho=FLAGS.rho,
                         tau=FLAGS.tau)
    elif subcommand == 'allocate':
        cli.cmd_allocate(FLAGS.out, method, zeta=FLAGS.zeta, tau=FLAGS.tau,
                         maps_dir=FLAGS.maps, dataset_dir=FLAGS.dataset,
                         delta=FLAGS.delta)
    elif subcommand == 'evaluate':
        cli.cmd_evaluate(FLAGS.out, _require('dataset'), _require('rates'),
                         method, zeta=FLAGS.zeta, maps_dir=FLAGS.maps,
                         exact=FLAGS.exact_outage)
    elif subcommand == 'compare':
        cli.cmd_compare(_require('evals'), FLAGS.out, rates_dir=FLAGS.rates)
    else:
        try:
            zetas = [float(z) for z in FLAGS.zetas]
            n_samples = [int(n) for n in FLAGS.n_samples]
            seeds = [int(s) for s in FLAGS.seeds]
        except ValueError as e:
            raise errors.ConfigError('sweep', str(e)) from e
        cli.cmd_sweep(_scenario_config(), zetas, n_samples, seeds, FLAGS.out,
                      exact=FLAGS.exact_outage)


def main(argv):
    if len(argv) != 2 or argv[1] not in _SUBCOMMANDS:
        raise app.UsageError(f'Expected one subcommand out of {_SUBCOMMANDS}')
    try:
        _run(argv[1])
    except errors.TailmapError as e:
        logging.error('%s failed: %s', argv[1], e)
        sys.exit(e.exit_code)


if __name__ == "__main__":
    app.run(main)


# How to run this script:

# Example commands on the desk preset:
# python scripts/run.py generate --preset=desk --seed=0 --out=/tmp/tm/data
# python scripts/run.py fit-maps --dataset=/tmp/tm/data --out=/tmp/tm/maps
# python scripts/run.py allocate --method=evt --maps=/tmp/tm/maps --dataset=/tmp/tm/data --zeta=1e-3 --out=/tmp/tm/rates
# python scripts/run.py allocate --method=benchmark --dataset=/tmp/tm/data --zeta=1e-3 --out=/tmp/tm/rates
# python scripts/run.py evaluate --method=evt --dataset=/tmp/tm/data --rates=/tmp/tm/rates --maps=/tmp/tm/maps --out=/tmp/tm/eval
# python scripts/run.py evaluate --method=benchmark --dataset=/tmp/tm/data --rates=/tmp/tm/rates --out=/tmp/tm/eval
# python scripts/run.py compare --evals=/tmp/tm/eval --rates=/tmp/tm/rates --out=/tmp/tm/compare
# python scripts/run.py sweep --preset=desk --zetas=1e-3 --out=/tmp/tm/sweep
