import click
import json
import pdb
import sys
import traceback

from functools import wraps
from logbook import StreamHandler
from anyscene import pipeline
from anyscene.config import RunConfig
from anyscene.errors import AnysceneError, MethodCountError
from anyscene.errors import UnknownMethodError


VALID_FILE = click.Path(exists=True, dir_okay=False)


def enable_post_mortem_debugging():  # pragma: no cover

    def hook(type, value, tb):
        if hasattr(sys, 'ps1') or not sys.stderr.isatty():
            sys.__excepthook__(type, value, tb)
        else:
            traceback.print_exception(type, value, tb)
            pdb.post_mortem(tb)

    sys.excepthook = hook


def report_errors(fn):
    """ Turns anyscene errors into a JSON line on stderr and the exit code
    of the error's category.

    """

    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AnysceneError as e:
            record = {'error': e.category, 'type': e.__class__.__name__}
            record.update(e.details)

            click.echo(json.dumps(record, default=str), err=True)
            sys.exit(e.exit_code)

    return wrapper


def parse_methods(value):
    methods = tuple(m.strip() for m in value.split(',') if m.strip())

    for method in methods:
        if method not in pipeline.METHODS:
            raise UnknownMethodError(method)

    return methods


config_option = click.option(
    '--config', 'path', envvar='ANYSCENE_CONFIG', type=VALID_FILE,
    required=True, help="Run configuration (JSON)")


@click.group()
@click.option('--pdb', help="Enable post-mortem debugging", is_flag=True)
@click.option('--verbose', help="Print log messages to stdout", is_flag=True)
@click.pass_context
def cli(ctx, pdb, verbose):  # pragma: no cover
    if pdb:
        enable_post_mortem_debugging()

    level = verbose and 'INFO' or 'WARNING'
    StreamHandler(sys.stdout, level=level).push_application()


@cli.group()
def hier():
    """ Segmentation hierarchies. """


@hier.command(name='build')
@config_option
@report_errors
def hier_build_cli(path):
    pipeline.build_trees(RunConfig.load(path))


@cli.group()
def actions():
    """ Action proposal. """


@actions.command(name='propose')
@config_option
@report_errors
def actions_propose_cli(path):
    pipeline.propose(RunConfig.load(path))


@cli.group()
def policy():
    """ Policy learning. """


@policy.command(name='train')
@config_option
@report_errors
def policy_train_cli(path):
    pipeline.train(RunConfig.load(path))


@cli.command(name='predict')
@config_option
@click.option('--image', required=True)
@click.option('--budget', type=float, default=float('inf'))
@click.option('--method', default='dnm')
@click.option('--out', type=click.Path(dir_okay=False), required=True)
@click.option('--trajectory', type=click.Path(dir_okay=False), default=None)
@report_errors
def predict_cli(path, image, budget, method, out, trajectory):
    pipeline.predict(
        RunConfig.load(path), image, budget, out,
        method=parse_methods(method)[0], trajectory=trajectory)


@cli.group(name='eval')
def evaluation():
    """ Anytime evaluation. """


@evaluation.command(name='curve')
@config_option
@click.option('--methods', default='dnm,sm,rs')
@click.option('--split', default='test')
@click.option('--out', type=click.Path(dir_okay=False), required=True)
@click.option('--normalized', type=click.Path(dir_okay=False), default=None,
              help="Also write the curves as fractions of their final point")
@click.option('--losses', type=click.Path(dir_okay=False), default=None,
              help="Also write the labeling loss at each budget")
@report_errors
def eval_curve_cli(path, methods, split, out, normalized, losses):
    pipeline.evaluate(
        RunConfig.load(path), parse_methods(methods), out, split,
        normalized=normalized, losses=losses)


@evaluation.command(name='gap')
@config_option
@click.option('--methods', default='dnm,sm')
@click.option('--split', default='test')
@click.option('--out', type=click.Path(dir_okay=False), required=True)
@report_errors
def eval_gap_cli(path, methods, split, out):
    methods = parse_methods(methods)

    if len(methods) != 2:
        raise MethodCountError(2, methods)

    pipeline.gap(RunConfig.load(path), *methods, out, split)


@cli.group()
def synth():
    """ Synthetic scenes. """


@synth.command(name='gen')
@config_option
@click.option('--out', type=click.Path(file_okay=False), required=True)
@report_errors
def synth_gen_cli(path, out):
    pipeline.generate(RunConfig.load(path), out)
