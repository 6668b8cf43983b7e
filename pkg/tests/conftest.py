"""Pytest wiring for absltest-based test cases."""

from absl import flags


def pytest_configure(config):
    # absltest.main() normally parses flags; under pytest mark them parsed so
    # that TestCase.create_tempdir() can read --test_tmpdir.
    del config
    flags.FLAGS.mark_as_parsed()
