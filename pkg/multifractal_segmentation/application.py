import argparse
import json
import logging
import re
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import (
    coarse_spectrum,
    evaluation,
    holder,
    legendre,
    mlp,
    raster_io,
    segment,
    synth,
)
from .config import ConfigError, JobConfig
from .measure import MeasureField

LOG = logging.getLogger(__name__)

# comma delimited list with leading and trailing whitespace removed
_LIST_PATTERN = re.compile(r"(?:^|,)\s*([^,]*[^,\s])\s*")
# destinations that are plumbing rather than options
_RESERVED = {"help", "handler", "parser", "config", "verbose", "threads"}

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _argument_to_list(argument: str) -> list[str]:
    return re.findall(_LIST_PATTERN, argument)


def _argument_to_floats(argument: str) -> list[float]:
    return [float(item) for item in _argument_to_list(argument)]


def _argument_to_ints(argument: str) -> list[int]:
    return [int(item) for item in _argument_to_list(argument)]


_LIST_TYPES = (_argument_to_list, _argument_to_floats, _argument_to_ints)


def _positive_int(argument: str) -> int:
    value = int(argument)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be positive: {value}")
    return value


def _rectangle(argument: str) -> synth.Rectangle:
    try:
        x, y, width, height = _argument_to_ints(argument)
        return synth.Rectangle(x=x, y=y, width=width, height=height)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"a rectangle is x,y,width,height with a positive size:"
            f" {argument!r}"
        )


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name) is None:
            args.parser.error(f"--{name.replace('_', '-')} is required")


def _select_band(
    stack: raster_io.RasterStack, name: Optional[str]
) -> raster_io.RasterBand:
    return stack.bands[0] if name is None else stack.band(name)


def _largest_power_of_two(limit: int) -> int:
    return 1 << (limit.bit_length() - 1) if limit >= 1 else 0


def _analysis_window(
    stack: raster_io.RasterStack,
    args: argparse.Namespace,
    reach: int,
) -> raster_io.AnalysisWindow:
    pad = reach if args.pad is None else args.pad
    if args.core_size is None:
        core_size = _largest_power_of_two(
            min(stack.width, stack.height) - 2 * pad
        )
        if not core_size:
            raise ValueError(
                f"a {stack.width}x{stack.height} raster leaves no core"
                f" inside {pad} pixels of padding"
            )
    else:
        core_size = args.core_size
    if args.core_x is None or args.core_y is None:
        return raster_io.AnalysisWindow.centered(
            width=stack.width,
            height=stack.height,
            core_size=core_size,
            pad=pad,
        )
    window = raster_io.AnalysisWindow(
        core_x=args.core_x, core_y=args.core_y, core_size=core_size, pad=pad
    )
    window.check_fits(stack.width, stack.height)
    return window


def _analysed_field(
    args: argparse.Namespace, reach: int
) -> tuple[MeasureField, raster_io.AnalysisWindow]:
    """The measure over the padded window and the window inside it."""
    stack = raster_io.load_raster(args.input)
    band = _select_band(stack, args.band)
    if args.gain is not None:
        band = raster_io.calibrate(band, args.gain, args.offset)
    window = _analysis_window(stack, args, reach)
    LOG.info(
        f"Analysing band {band.name!r}: core {window.core_size} pixels"
        f" at ({window.core_x}, {window.core_y}), padding {window.pad}"
    )
    padded = raster_io.extract_window(
        raster_io.RasterStack(bands=(band,)), window
    )
    return MeasureField(padded.bands[0]), window.localized()


def _ladder(args: argparse.Namespace) -> holder.WindowLadder:
    if args.k_values is not None:
        return holder.WindowLadder(k_values=tuple(args.k_values))
    return holder.WindowLadder.for_sensor(args.sensor)


def _load_alpha_map(path: str) -> holder.AlphaMap:
    return holder.AlphaMap.from_stack(raster_io.load_raster(path))


def _q_grid(args: argparse.Namespace) -> np.ndarray:
    return legendre.default_q_grid(args.q_min, args.q_max, args.q_step)


def _run_alpha_map(args: argparse.Namespace) -> None:
    _require(args, "output")
    ladder = _ladder(args)
    field, window = _analysed_field(args, ladder.max_halfwidth)
    am = holder.alpha_map(
        field, window, ladder, threads=args.threads, min_r2=args.min_r2
    )
    raster_io.save_raster(am.to_stack(), args.output, dtype="f64")
    LOG.info(f"Wrote alpha map: {args.output}")


def _run_spectrum_coarse(args: argparse.Namespace) -> None:
    _require(args, "output")
    am = _load_alpha_map(args.alpha)
    part = coarse_spectrum.bin_alpha(am, args.classes)
    widths = args.mesh_widths or coarse_spectrum.mesh_ladder(
        min(am.width, am.height)
    )
    curve = coarse_spectrum.coarse_spectrum(
        am, part, widths, threads=args.threads
    )
    raster_io.save_spectrum_csv(curve, args.output)
    LOG.info(f"Wrote coarse spectrum: {args.output}")


def _run_spectrum_legendre(args: argparse.Namespace) -> None:
    _require(args, "output")
    field, window = _analysed_field(args, 0)
    widths = args.mesh_widths or coarse_spectrum.mesh_ladder(window.core_size)
    table = legendre.partition_function(
        field, window.core, _q_grid(args), widths, threads=args.threads
    )
    tau_curve = legendre.tau(table)
    if args.tau_output is not None:
        raster_io.save_tau_csv(tau_curve, args.tau_output)
        LOG.info(f"Wrote mass exponents: {args.tau_output}")
    curve = legendre.legendre_spectrum(tau_curve)
    raster_io.save_spectrum_csv(curve, args.output)
    LOG.info(f"Wrote Legendre spectrum: {args.output}")


def _run_fmap(args: argparse.Namespace) -> None:
    _require(args, "output")
    am = _load_alpha_map(args.alpha)
    curve = raster_io.load_spectrum_csv(args.spectrum)
    fm = coarse_spectrum.f_map(am, curve, degree=args.poly_degree)
    raster_io.save_raster(
        raster_io.RasterStack(bands=(fm.to_band(),)), args.output, dtype="f64"
    )
    LOG.info(f"Wrote f map: {args.output}")


def _thresholds(args: argparse.Namespace) -> segment.ThresholdSpec:
    bounds = (args.alpha_lo, args.alpha_hi, args.f_lo, args.f_hi)
    if args.thresholds is not None:
        if any(bound is not None for bound in bounds):
            args.parser.error(
                "--thresholds cannot be combined with explicit bounds"
            )
        return segment.ThresholdSpec.from_json(args.thresholds)
    _require(args, "alpha_lo", "alpha_hi", "f_lo", "f_hi")
    return segment.ThresholdSpec(
        alpha_lo=args.alpha_lo,
        alpha_hi=args.alpha_hi,
        f_lo=args.f_lo,
        f_hi=args.f_hi,
    )


def _save_mask(mask: segment.SegmentationMask, args) -> None:
    if args.majority is not None:
        mask = segment.majority_filter(mask, args.majority)
    raster_io.save_mask(mask, args.output)
    LOG.info(f"Wrote mask with {mask.water_count()} water pixels")


def _run_segment_mf(args: argparse.Namespace) -> None:
    _require(args, "output")
    thresholds = _thresholds(args)
    am = _load_alpha_map(args.alpha)
    fm = coarse_spectrum.FMap.from_band(
        raster_io.load_raster(args.fmap).band(coarse_spectrum.F_BAND)
    )
    _save_mask(segment.threshold_classify(am, fm, thresholds), args)


def _run_segment_ndwi(args: argparse.Namespace) -> None:
    _require(args, "output")
    stack = raster_io.load_raster(args.input)
    index = segment.ndwi(
        stack.band(args.red_band), stack.band(args.swir_band)
    )
    if args.ndwi_output is not None:
        raster_io.save_raster(
            raster_io.RasterStack(bands=(index,)), args.ndwi_output
        )
    _save_mask(segment.ndwi_classify(index), args)


def _run_segment_suggest(args: argparse.Namespace) -> None:
    _require(args, "output")
    curve = raster_io.load_spectrum_csv(args.spectrum)
    candidates = segment.suggest_thresholds(curve, args.tolerance)
    for candidate in candidates:
        LOG.info(f"Candidate: {candidate}")
    Path(args.output).write_text(
        json.dumps([c.to_dict() for c in candidates], indent=2) + "\n",
        encoding="utf-8",
    )


def _run_filter_majority(args: argparse.Namespace) -> None:
    _require(args, "output")
    mask = raster_io.load_mask(args.mask)
    raster_io.save_mask(
        segment.majority_filter(mask, args.kernel), args.output
    )


def _run_compare(args: argparse.Namespace) -> None:
    _require(args, "output")
    cm = evaluation.confusion(
        raster_io.load_mask(args.test), raster_io.load_mask(args.reference)
    )
    report = evaluation.metrics(cm)
    for line in report.format_table().splitlines():
        LOG.info(line)
    Path(args.output).write_text(report.to_json(), encoding="utf-8")


def _cascade_spec(args: argparse.Namespace) -> synth.CascadeSpec:
    return synth.CascadeSpec(
        weights=tuple(args.weights),
        depth=args.depth,
        shuffle_seed=args.shuffle_seed,
    )


def _run_synth_cascade(args: argparse.Namespace) -> None:
    _require(args, "output")
    band = synth.cascade(_cascade_spec(args))
    raster_io.save_raster(
        raster_io.RasterStack(bands=(band,)), args.output, dtype="f64"
    )


def _run_synth_scene(args: argparse.Namespace) -> None:
    _require(args, "output", "truth_output")
    spec = _cascade_spec(args)
    band, truth = synth.composite_scene(
        side=spec.side if args.side is None else args.side,
        water_regions=args.water,
        water_level=args.water_level,
        noise_amp=args.noise_amp,
        land_spec=spec,
        seed=args.seed,
    )
    raster_io.save_raster(
        raster_io.RasterStack(bands=(band,)), args.output, dtype="f64"
    )
    raster_io.save_mask(truth, args.truth_output)
    if args.reflectance_output is not None:
        raster_io.save_raster(
            synth.reflectance_scene(truth, args.seed),
            args.reflectance_output,
        )


def _run_synth_analytic(args: argparse.Namespace) -> None:
    _require(args, "output")
    spec = synth.CascadeSpec(weights=tuple(args.weights), depth=1)
    q_grid = _q_grid(args)
    raster_io.save_spectrum_csv(
        synth.analytic_spectrum(spec, q_grid), args.output
    )
    if args.tau_output is not None:
        tau = np.array([synth.analytic_tau(spec, q) for q in q_grid])
        raster_io.save_tau_csv(
            legendre.TauCurve(q_grid=q_grid, tau=tau, r2=np.ones(len(tau))),
            args.tau_output,
        )


def _band_stack(args: argparse.Namespace) -> raster_io.RasterStack:
    stack = raster_io.load_raster(args.input)
    return stack if args.bands is None else stack.select(args.bands)


def _run_mlp_train(args: argparse.Namespace) -> None:
    _require(args, "output")
    stack = _band_stack(args)
    truth = raster_io.load_mask(args.truth)
    if (truth.height, truth.width) != (stack.height, stack.width):
        raise ValueError("the truth mask and the raster differ in size")
    model = mlp.train(
        mlp.pixel_vectors(stack),
        truth.water.ravel(),
        [len(stack), args.hidden, 2],
        mlp.TrainConfig(
            seed=args.seed,
            max_epochs=args.max_epochs,
            patience=args.patience,
            optimizer=args.optimizer,
            learning_rate=args.learning_rate,
        ),
    )
    mlp.save_model(model, args.output)


def _run_mlp_predict(args: argparse.Namespace) -> None:
    _require(args, "output")
    model = mlp.load_model(args.model)
    _save_mask(mlp.predict_mask(model, _band_stack(args)), args)


def _add_output(parser: argparse.ArgumentParser, what: str) -> None:
    parser.add_argument("-o", "--output", help=f"Where to write {what}.")


def _add_band_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("input", help="The raster to analyse.")
    parser.add_argument(
        "--band", help="The band to analyse; the first band by default."
    )
    parser.add_argument(
        "--gain",
        type=float,
        help="Linear calibration gain applied before the analysis.",
    )
    parser.add_argument(
        "--offset",
        type=float,
        default=0.0,
        help="Linear calibration offset applied with --gain.",
    )
    parser.add_argument(
        "--core-size",
        type=_positive_int,
        help="Side of the analysed square; the largest power of two"
        " that fits by default.",
    )
    parser.add_argument("--core-x", type=int, help="Left edge of the core.")
    parser.add_argument("--core-y", type=int, help="Top edge of the core.")
    parser.add_argument(
        "--pad",
        type=int,
        help="Padding around the core; the largest window reach by default.",
    )


def _add_mesh_widths(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--mesh-widths",
        type=_argument_to_ints,
        help="Box widths of the meshes; 4 to 1024 as the region allows.",
    )


def _add_q_grid(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--q-min", type=float, default=-10.0)
    parser.add_argument("--q-max", type=float, default=10.0)
    parser.add_argument("--q-step", type=float, default=0.25)


def _add_majority(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--majority",
        type=int,
        help="Apply a majority filter with this kernel to the mask.",
    )


def _add_cascade(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--weights",
        type=_argument_to_floats,
        default=[0.4, 0.3, 0.2, 0.1],
        help="The four subdivision weights, row-major.",
    )
    parser.add_argument("--depth", type=_positive_int, default=10)
    parser.add_argument(
        "--shuffle-seed",
        type=int,
        help="Permute the weights in every cell with this seed.",
    )


def _leaf(subparsers, name: str, handler, **kwargs) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(name, **kwargs)
    parser.set_defaults(handler=handler, parser=parser)
    return parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Water body segmentation from multifractal analysis."
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_const",
        const=logging.DEBUG,
        default=logging.INFO,
        help="Increase output verbosity",
    )
    parser.add_argument(
        "--threads",
        type=_positive_int,
        default=1,
        help="Worker threads; results do not depend on it.",
    )
    parser.add_argument(
        "--config",
        help="A JSON file of option values for the subcommand.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    alpha = _leaf(
        commands,
        "alpha-map",
        _run_alpha_map,
        help="Estimate Hölder exponents of a raster band.",
    )
    _add_band_options(alpha)
    _add_output(alpha, "the alpha and r2 raster")
    alpha.add_argument(
        "--sensor", choices=("optical", "sar"), default="optical"
    )
    alpha.add_argument(
        "--k-values",
        type=_argument_to_ints,
        help="Explicit neighbourhood sizes instead of the sensor ladder.",
    )
    alpha.add_argument(
        "--min-r2",
        type=float,
        help="Mark pixels whose fit explains less than this invalid.",
    )

    spectrum = commands.add_parser("spectrum", help="Multifractal spectra.")
    kinds = spectrum.add_subparsers(dest="kind", required=True)
    coarse = _leaf(kinds, "coarse", _run_spectrum_coarse)
    coarse.add_argument("alpha", help="An alpha raster.")
    _add_output(coarse, "the spectrum CSV")
    coarse.add_argument(
        "--classes",
        type=_positive_int,
        default=coarse_spectrum.DEFAULT_CLASSES,
    )
    _add_mesh_widths(coarse)
    by_moments = _leaf(kinds, "legendre", _run_spectrum_legendre)
    _add_band_options(by_moments)
    _add_output(by_moments, "the spectrum CSV")
    by_moments.add_argument("--tau-output", help="Also write tau(q) here.")
    _add_q_grid(by_moments)
    _add_mesh_widths(by_moments)

    fmap = _leaf(
        commands, "fmap", _run_fmap, help="Map each pixel to f(alpha)."
    )
    fmap.add_argument("alpha", help="An alpha raster.")
    fmap.add_argument("spectrum", help="A spectrum CSV.")
    _add_output(fmap, "the f raster")
    fmap.add_argument(
        "--poly-degree",
        type=int,
        help="Fit a polynomial of this degree instead of interpolating.",
    )

    segments = commands.add_parser("segment", help="Water masks.")
    methods = segments.add_subparsers(dest="method", required=True)
    by_thresholds = _leaf(methods, "mf", _run_segment_mf)
    by_thresholds.add_argument("alpha", help="An alpha raster.")
    by_thresholds.add_argument("fmap", help="An f raster.")
    _add_output(by_thresholds, "the mask")
    by_thresholds.add_argument(
        "--thresholds", help="A JSON file with the four bounds."
    )
    for bound in ("alpha-lo", "alpha-hi", "f-lo", "f-hi"):
        by_thresholds.add_argument(f"--{bound}", type=float)
    _add_majority(by_thresholds)
    by_index = _leaf(methods, "ndwi", _run_segment_ndwi)
    by_index.add_argument("input", help="A raster with red and SWIR bands.")
    _add_output(by_index, "the mask")
    by_index.add_argument("--red-band", default="red")
    by_index.add_argument("--swir-band", default="swir")
    by_index.add_argument("--ndwi-output", help="Also write NDWI here.")
    _add_majority(by_index)
    suggest = _leaf(methods, "suggest", _run_segment_suggest)
    suggest.add_argument("spectrum", help="A coarse spectrum CSV.")
    _add_output(suggest, "the candidate thresholds JSON")
    suggest.add_argument("--tolerance", type=float, default=0.1)

    majority = _leaf(
        commands,
        "filter-majority",
        _run_filter_majority,
        help="Majority-filter a mask.",
    )
    majority.add_argument("mask")
    _add_output(majority, "the filtered mask")
    majority.add_argument("--kernel", type=int, default=7)

    compare = _leaf(
        commands, "compare", _run_compare, help="Compare two masks."
    )
    compare.add_argument("test")
    compare.add_argument("reference")
    _add_output(compare, "the JSON report")

    synthesis = commands.add_parser("synth", help="Synthetic data.")
    products = synthesis.add_subparsers(dest="product", required=True)
    cascade = _leaf(products, "cascade", _run_synth_cascade)
    _add_cascade(cascade)
    _add_output(cascade, "the cascade raster")
    scene = _leaf(products, "scene", _run_synth_scene)
    _add_cascade(scene)
    _add_output(scene, "the scene raster")
    scene.add_argument("--truth-output", help="Where to write the truth.")
    scene.add_argument(
        "--reflectance-output",
        help="Also write matching blue..SWIR reflectances here.",
    )
    scene.add_argument("--side", type=_positive_int)
    scene.add_argument(
        "--water",
        action="append",
        type=_rectangle,
        default=[],
        help="A water rectangle x,y,width,height; repeatable.",
    )
    scene.add_argument("--water-level", type=float, default=0.3)
    scene.add_argument("--noise-amp", type=float, default=0.0)
    scene.add_argument("--seed", type=int, default=0)
    analytic = _leaf(products, "analytic", _run_synth_analytic)
    _add_cascade(analytic)
    _add_output(analytic, "the analytic spectrum CSV")
    analytic.add_argument("--tau-output", help="Also write tau(q) here.")
    _add_q_grid(analytic)

    network = commands.add_parser("mlp", help="Neural network baseline.")
    steps = network.add_subparsers(dest="step", required=True)
    training = _leaf(steps, "train", _run_mlp_train)
    training.add_argument("input")
    training.add_argument("truth", help="The ground-truth mask.")
    _add_output(training, "the model JSON")
    training.add_argument("--bands", type=_argument_to_list)
    training.add_argument("--hidden", type=_positive_int, default=20)
    training.add_argument("--seed", type=int, default=0)
    training.add_argument("--max-epochs", type=int, default=1000)
    training.add_argument("--patience", type=_positive_int, default=50)
    training.add_argument(
        "--optimizer", choices=mlp.OPTIMIZERS, default="scg"
    )
    training.add_argument("--learning-rate", type=float, default=0.5)
    prediction = _leaf(steps, "predict", _run_mlp_predict)
    prediction.add_argument("input")
    prediction.add_argument("model")
    _add_output(prediction, "the mask")
    prediction.add_argument("--bands", type=_argument_to_list)
    _add_majority(prediction)
    return parser


def _config_item(action: argparse.Action, value: Any, source: str) -> Any:
    """Converts one JSON value the way the option converts its flag text."""
    name = f"{source}: option {action.dest}"
    if value is None:
        if action.default is not None:
            raise ConfigError(f"{name} cannot be null")
        return None
    if action.type in _LIST_TYPES and not isinstance(value, (list, str)):
        raise ConfigError(f"{name} takes a list")
    if isinstance(value, list):
        if action.type not in _LIST_TYPES:
            raise ConfigError(f"{name} does not take a list")
        text = ",".join(str(item) for item in value)
    elif isinstance(value, (int, float, str)) and not isinstance(value, bool):
        text = str(value)
    else:
        raise ConfigError(f"{name} cannot be {value!r}")
    try:
        converted = text if action.type is None else action.type(text)
    except (ValueError, TypeError, argparse.ArgumentTypeError) as error:
        raise ConfigError(f"{name}: {error}")
    if action.choices is not None and converted not in action.choices:
        raise ConfigError(
            f"{name} must be one of {', '.join(map(str, action.choices))}"
        )
    return converted


def _config_value(action: argparse.Action, value: Any, source: str) -> Any:
    if isinstance(action, argparse._AppendAction):
        if not isinstance(value, list):
            raise ConfigError(f"{source}: option {action.dest} takes a list")
        # each repeated value may itself be written as a JSON list
        return [
            _config_item(
                action,
                ",".join(map(str, item)) if isinstance(item, list) else item,
                source,
            )
            for item in value
        ]
    return _config_item(action, value, source)


def _apply_config(
    parser: argparse.ArgumentParser,
    args: argparse.Namespace,
    argv: Optional[Sequence[str]],
) -> argparse.Namespace:
    job = JobConfig.load(args.config)
    leaf: argparse.ArgumentParser = args.parser
    options = {
        action.dest: action
        for action in leaf._actions
        if action.option_strings and action.dest not in _RESERVED
    }
    job.check_keys(options)
    leaf.set_defaults(
        **{
            key: _config_value(options[key], value, job.source)
            for key, value in job.values.items()
        }
    )
    LOG.debug(f"Applied {len(job)} options from {job.source}")
    # flags given on the command line still win over the file
    return parser.parse_args(args=argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        style="{",
        format="[{asctime:s}] {levelname:s} {message:s}",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    parser = _build_parser()
    args = parser.parse_args(args=argv)
    logging.getLogger().setLevel(args.verbose)
    try:
        if args.config is not None:
            args = _apply_config(parser, args, argv)
        args.handler(args)
    except ConfigError as error:
        LOG.error(f"Configuration error: {error}")
        return EXIT_USAGE
    except (OSError, raster_io.RasterFormatError) as error:
        LOG.error(f"I/O error: {error}")
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as error:
        LOG.error(f"Cannot proceed: {error}")
        return EXIT_NUMERIC
    return 0
