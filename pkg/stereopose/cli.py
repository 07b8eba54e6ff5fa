"""
Command line interface.

Exit codes: 0 on success, 1 if a validation or metric threshold fails, 2 on
usage errors and 3 on input/output, parse or configuration errors. Summaries
are printed as a single JSON object on standard output; metric reports are
CSV.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from stereopose import __version__
from stereopose.action import (
    ablate_depth,
    accuracy,
    gen_motion_dataset,
    load_action_model,
    read_sequences,
    save_action_model,
    shuffle_labels,
    split_sequences,
    train_action,
    write_sequences,
)
from stereopose.config import ConfigError, StereoPoseConfig, load_config
from stereopose.dataset import (
    DatasetWriteError,
    ParseError,
    filter_split,
    read_records,
)
from stereopose.experiments import (
    add_keypoint_noise,
    dx_ablation,
    make_corpus,
    relative_spread,
    stereo_vs_monocular,
)
from stereopose.geosearch import GeometricSearchError, refine
from stereopose.labeling import (
    crop_intrinsics,
    label_dataset,
    refine_dataset,
    validate_dataset,
)
from stereopose.lifting import (
    ModelKindError,
    ReconInput,
    TrainingMode,
    ViewSynthModel,
    load_lifter,
    predict_coarse_batch,
    right_view_pixels,
    save_lifter,
    train_monocular,
    train_reconstruction,
    train_view_synthesis,
)
from stereopose.metrics import (
    joint_position_errors,
    mpjpe_report,
    pck3d_reports,
    pckh_report,
)
from stereopose.neuralnet import EmptyDatasetError, ModelFormatError
from stereopose.report import (
    evaluation_rows,
    histogram_rows,
    loss_curve_rows,
    plot_dx_ablation,
    plot_error_histogram,
    plot_loss_curves,
    write_rows,
)
from stereopose.skeleton import Frame, Pose2D, Pose3D, root_align_array
from stereopose.synthgen import (
    GenerationExhaustedError,
    generate_dataset,
    pair_from_record,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_THRESHOLD = 1
EXIT_USAGE = 2
EXIT_IO = 3


class CommandError(RuntimeError):
    """Raised by a command for invalid input data"""


def _print_summary(data):
    print(json.dumps(data, sort_keys=True))


def _output(args):
    return args.out if getattr(args, "out", None) else sys.stdout


def _load_pairs(path, split, test_fraction):
    pairs = []
    for record in filter_split(read_records(path), split, test_fraction):
        try:
            pairs.append(pair_from_record(record))
        except KeyError as error:
            raise CommandError(
                "Record %s is not a training pair: %s" % (record.id, error)
            ) from error
    if not pairs:
        raise CommandError("No training pairs in %s (split %s)"
                           % (path, split))
    return pairs


def _history_summary(model, count):
    losses = model.history.losses
    return {
        "pairs": count,
        "epochs": len(losses),
        "final_loss": losses[-1] if losses else None,
    }


def cmd_synth_gen(args, config: StereoPoseConfig):
    synth = config.synth
    if args.dx is not None:
        synth = replace(synth, dx=args.dx)
    summary = generate_dataset(synth, args.n, args.out,
                               progress=args.progress)
    _print_summary(summary.to_dict())
    return EXIT_OK


def cmd_train_viewsynth(args, config: StereoPoseConfig):
    pairs = _load_pairs(args.data, args.split, args.test_fraction)
    model = train_view_synthesis(pairs, config.train, config.architecture,
                                 progress=args.progress)
    save_lifter(args.out, model, {"train": config.train.to_dict()})
    _print_summary(_history_summary(model, len(pairs)))
    return EXIT_OK


def cmd_train_recon(args, config: StereoPoseConfig):
    pairs = _load_pairs(args.data, args.split, args.test_fraction)
    if args.mode == "monocular":
        model = train_monocular(pairs, config.train, config.architecture,
                                progress=args.progress)
    else:
        if not args.view_model:
            raise CommandError("--view-model is required for stereo "
                               "reconstruction")
        view_model = load_lifter(args.view_model, "viewsynth")
        model = train_reconstruction(pairs, view_model, config.train,
                                     TrainingMode(args.mode),
                                     config.architecture,
                                     progress=args.progress)
    save_lifter(args.out, model, {"train": config.train.to_dict(),
                                  "mode": args.mode})
    _print_summary(_history_summary(model, len(pairs)))
    return EXIT_OK


def _load_lifters(args):
    recon_model = load_lifter(args.recon_model, "recon")
    view_model = None
    if recon_model.input == ReconInput.STEREO:
        if not args.view_model:
            raise CommandError("--view-model is required for stereo "
                               "reconstruction models")
        view_model = load_lifter(args.view_model, "viewsynth")
    return view_model, recon_model


def cmd_label(args, config: StereoPoseConfig):
    view_model, recon_model = _load_lifters(args)
    summary = label_dataset(args.input, args.out, view_model, recon_model,
                            config.search, config.label,
                            progress=args.progress, split=args.split,
                            test_fraction=args.test_fraction)
    _print_summary(summary.to_dict())
    return EXIT_OK


def cmd_refine(args, config: StereoPoseConfig):
    summary = refine_dataset(args.input, args.out, config.search,
                             config.label, progress=args.progress,
                             split=args.split,
                             test_fraction=args.test_fraction)
    _print_summary(summary.to_dict())
    return EXIT_OK


def cmd_validate(args, config: StereoPoseConfig):
    violations = validate_dataset(args.file, config.label)
    _print_summary({
        "violations": len(violations),
        "details": [violation.to_dict() for violation in violations],
    })
    return EXIT_THRESHOLD if violations else EXIT_OK


def _ground_truth_3d(record):
    if record.joints3d_rel is not None:
        joints = record.joints3d_rel
    elif record.joints3d_abs is not None:
        joints = record.joints3d_abs
    else:
        return None
    return Pose3D(root_align_array(joints, record.schema.root_index),
                  record.schema, Frame.ROOT_RELATIVE)


def _predicted_3d(args, config, records):
    """Pairs of predicted and ground-truth 3D poses of the records"""
    samples = []
    if args.pred:
        predictions = {record.id: record for record in read_records(args.pred)}
        for record in records:
            gt = _ground_truth_3d(record)
            pred = predictions.get(record.id)
            if gt is None or pred is None or pred.joints3d_rel is None:
                logger.warning("Skipping record %s without prediction or "
                               "ground truth", record.id)
                continue
            samples.append((_ground_truth_3d(pred), gt))
        return samples

    view_model, recon_model = _load_lifters(args)
    records = [record for record in records
               if _ground_truth_3d(record) is not None]
    if not records:
        return samples
    left = add_keypoint_noise(np.stack([r.joints2d for r in records]),
                              args.keypoint_noise, config.train.seed)
    coarse = predict_coarse_batch(view_model, recon_model, left)
    for record, pixels, joints in zip(records, left, coarse):
        pred = Pose3D(joints, record.schema, Frame.ROOT_RELATIVE)
        if args.refine:
            try:
                pred = refine(pred, Pose2D(pixels, record.schema),
                              crop_intrinsics(record, config.label),
                              config.search).pose_rel
            except GeometricSearchError as error:
                logger.warning("Search failed on record %s: %s", record.id,
                               error)
                continue
        samples.append((pred, _ground_truth_3d(record)))
    return samples


def _predicted_right(args, records):
    if args.pred:
        predictions = {record.id: record for record in read_records(args.pred)}
        return [
            (predictions[record.id].pose2d, record.pose2d)
            for record in records
            if record.id in predictions
        ]
    if not args.view_model:
        raise CommandError("pckh needs --pred or --view-model")
    view_model: ViewSynthModel = load_lifter(args.view_model, "viewsynth")
    records = [record for record in records
               if "joints2d_right" in record.meta]
    if not records:
        return []
    right = right_view_pixels(view_model,
                              np.stack([r.joints2d for r in records]))
    return [
        (Pose2D(pred, record.schema),
         Pose2D(record.meta["joints2d_right"], record.schema))
        for pred, record in zip(right, records)
    ]


def _check_threshold(args, metric, value):
    if args.fail_above is not None and value > args.fail_above:
        logger.error("%s %.6g exceeds %.6g", metric, value, args.fail_above)
        return EXIT_THRESHOLD
    if args.fail_below is not None and value < args.fail_below:
        logger.error("%s %.6g is below %.6g", metric, value, args.fail_below)
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_eval(args, config: StereoPoseConfig):
    records = list(filter_split(read_records(args.data), args.split,
                                args.test_fraction))
    if args.metric == "pckh":
        samples = _predicted_right(args, records)
        if not samples:
            raise CommandError("No samples to evaluate")
        reports = [pckh_report(samples)]
    else:
        samples = _predicted_3d(args, config, records)
        if not samples:
            raise CommandError("No samples to evaluate")
        if args.metric == "mpjpe":
            reports = [mpjpe_report(samples)]
        else:
            reports = list(pck3d_reports(samples))
    rows = [row for report in reports for row in report.rows()]
    write_rows(_output(args), rows)
    return _check_threshold(args, reports[0].metric, reports[0].value)


def cmd_action_gen(args, config: StereoPoseConfig):
    action = config.action
    n_per_class = args.n_per_class or action.n_per_class
    sequences = gen_motion_dataset(action.seed, n_per_class, action)
    count = write_sequences(args.out, sequences)
    _print_summary({"sequences": count, "classes": action.n_classes})
    return EXIT_OK


def _action_sequences(args, config, split):
    sequences = read_sequences(args.data)
    if split != "all":
        train_set, test_set = split_sequences(sequences,
                                              config.action.test_fraction)
        sequences = train_set if split == "train" else test_set
    if args.ablate_depth:
        sequences = [ablate_depth(sequence) for sequence in sequences]
    return sequences


def cmd_action_train(args, config: StereoPoseConfig):
    sequences = _action_sequences(args, config, args.split or "train")
    if not sequences:
        raise CommandError("No sequences in %s" % args.data)
    if args.shuffle_labels:
        sequences = shuffle_labels(sequences, config.action.seed)
    train_config = replace(config.train, epochs=config.action.epochs)
    model = train_action(sequences, train_config, config.action,
                         progress=args.progress)
    save_action_model(args.out, model)
    _print_summary({"sequences": len(sequences),
                    "final_loss": model.history.losses[-1]
                    if model.history.losses else None})
    return EXIT_OK


def cmd_action_eval(args, config: StereoPoseConfig):
    sequences = _action_sequences(args, config, args.split or "test")
    if not sequences:
        raise CommandError("No sequences in %s" % args.data)
    model = load_action_model(args.model)
    value = accuracy(model, sequences)
    name = Path(args.model).stem
    write_rows(_output(args), [("accuracy", name, value, len(sequences))])
    return _check_threshold(args, "accuracy", value)


def cmd_report(args, config: StereoPoseConfig):
    rows = []
    plots = Path(args.plots) if args.plots else None
    if plots is not None:
        plots.mkdir(parents=True, exist_ok=True)

    models = {Path(path).stem: load_lifter(path) for path in args.models}
    for label, model in models.items():
        rows.extend(loss_curve_rows(label, model.history))
    if plots is not None and models:
        plot_loss_curves({label: model.history
                          for label, model in models.items()},
                         plots / "loss_curves.svg")

    if args.data:
        if not args.recon_model:
            raise CommandError("--data needs --recon-model")
        args.pred = None
        args.refine = False
        records = list(filter_split(read_records(args.data), args.split,
                                    args.test_fraction))
        samples = _predicted_3d(args, config, records)
        if samples:
            errors = np.stack([joint_position_errors(pred, gt)
                               for pred, gt in samples])
            rows.extend(histogram_rows(
                errors, samples[0][1].schema.joint_names,
                config.report.histogram_bins,
                config.report.histogram_max_mm,
            ))
            if plots is not None:
                plot_error_histogram(errors, plots / "error_histogram.svg",
                                     config.report.histogram_bins,
                                     config.report.histogram_max_mm)

    if args.dx_ablation is not None:
        if args.dx_ablation:
            dx_values = [float(item) for item in args.dx_ablation.split(",")]
        else:
            dx_values = list(config.report.dx_values)
        evaluations = dx_ablation(config.synth, dx_values,
                                  config.report.train_pairs, config.train,
                                  config.architecture,
                                  progress=args.progress)
        values = [evaluation.coarse.value for evaluation in evaluations]
        for dx, evaluation in zip(dx_values, evaluations):
            rows.append(("dx_ablation_mpjpe", "dx=%g" % dx,
                         evaluation.coarse.value, evaluation.coarse.count))
        rows.append(("dx_ablation_spread", "relative", relative_spread(values),
                     len(values)))
        if plots is not None:
            plot_dx_ablation(dx_values, values, plots / "dx_ablation.svg")

    if args.stereo_vs_mono:
        corpus = make_corpus(config.synth, config.report.train_pairs)
        evaluations = stereo_vs_monocular(
            corpus, config.train, config.architecture, config.search,
            args.keypoint_noise or config.report.keypoint_noise_px,
            progress=args.progress,
        )
        rows.extend(evaluation_rows(evaluations))

    write_rows(_output(args), rows)
    return EXIT_OK


def _add_split(parser, default="all"):
    parser.add_argument("--split", choices=("train", "test", "all"),
                        default=default,
                        help="Restrict to a split of the records by id hash")
    parser.add_argument("--test-fraction", type=float, default=0.2,
                        help="Share of records in the test split")


def _add_thresholds(parser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--fail-above", type=float,
                       help="Exit with code 1 if the value is larger")
    group.add_argument("--fail-below", type=float,
                       help="Exit with code 1 if the value is smaller")


def _add_models(parser, required=True):
    parser.add_argument("--view-model", help="View synthesis model file")
    parser.add_argument("--recon-model", required=required,
                        help="Reconstruction model file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stereopose",
        description="Generate 3D pose labels from 2D keypoints",
    )
    parser.add_argument("--version", action="version",
                        version="%(prog)s " + __version__)
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--seed", type=int, help="Override all seeds")
    parser.add_argument("--log-level", default="WARNING",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    parser.add_argument("--no-progress", dest="progress",
                        action="store_false", help="Hide progress bars")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="Synthetic data")
    synth_commands = synth.add_subparsers(dest="subcommand", required=True)
    gen = synth_commands.add_parser("gen", help="Generate training pairs")
    gen.add_argument("--n", type=int, required=True,
                     help="Number of records")
    gen.add_argument("--out", required=True, help="Output dataset file")
    gen.add_argument("--dx", type=float,
                     help="Shift of the virtual right camera in mm")
    gen.set_defaults(handler=cmd_synth_gen)

    train = commands.add_parser("train", help="Train lifting networks")
    train_commands = train.add_subparsers(dest="subcommand", required=True)
    viewsynth = train_commands.add_parser("viewsynth",
                                          help="Train view synthesis")
    viewsynth.add_argument("--data", required=True)
    viewsynth.add_argument("--out", required=True)
    _add_split(viewsynth, "train")
    viewsynth.set_defaults(handler=cmd_train_viewsynth)
    recon = train_commands.add_parser("recon", help="Train reconstruction")
    recon.add_argument("--data", required=True)
    recon.add_argument("--view-model")
    recon.add_argument("--out", required=True)
    recon.add_argument("--mode", default="self-synthesized",
                       choices=("self-synthesized", "teacher-forced",
                                "monocular"))
    _add_split(recon, "train")
    recon.set_defaults(handler=cmd_train_recon)

    label = commands.add_parser("label", help="Label a dataset")
    label.add_argument("--in", dest="input", required=True)
    label.add_argument("--out", required=True)
    _add_models(label)
    _add_split(label)
    label.set_defaults(handler=cmd_label)

    refine_parser = commands.add_parser(
        "refine", help="Run the geometric search on coarse poses"
    )
    refine_parser.add_argument("--in", dest="input", required=True)
    refine_parser.add_argument("--out", required=True)
    _add_split(refine_parser)
    refine_parser.set_defaults(handler=cmd_refine)

    validate = commands.add_parser("validate", help="Check a dataset file")
    validate.add_argument("file")
    validate.set_defaults(handler=cmd_validate)

    evaluate = commands.add_parser("eval", help="Evaluate predictions")
    evaluate.add_argument("metric", choices=("mpjpe", "pckh", "pck3d"))
    evaluate.add_argument("--data", required=True,
                          help="Dataset with ground truth")
    evaluate.add_argument("--pred", help="Dataset with predictions")
    evaluate.add_argument("--refine", action="store_true",
                          help="Apply the geometric search to predictions")
    evaluate.add_argument("--keypoint-noise", type=float, default=0.0,
                          help="Noise added to the 2D input, in pixels")
    evaluate.add_argument("--out", help="CSV output (default: stdout)")
    _add_models(evaluate, required=False)
    _add_split(evaluate, "test")
    _add_thresholds(evaluate)
    evaluate.set_defaults(handler=cmd_eval)

    action = commands.add_parser("action", help="Action classification")
    action_commands = action.add_subparsers(dest="subcommand", required=True)
    action_gen = action_commands.add_parser("gen",
                                            help="Generate motion sequences")
    action_gen.add_argument("--out", required=True)
    action_gen.add_argument("--n-per-class", type=int)
    action_gen.set_defaults(handler=cmd_action_gen)
    action_train = action_commands.add_parser("train",
                                              help="Train a classifier")
    action_train.add_argument("--data", required=True)
    action_train.add_argument("--out", required=True)
    action_train.add_argument("--shuffle-labels", action="store_true")
    action_eval = action_commands.add_parser("eval",
                                             help="Evaluate a classifier")
    action_eval.add_argument("--data", required=True)
    action_eval.add_argument("--model", required=True)
    action_eval.add_argument("--out", help="CSV output (default: stdout)")
    _add_thresholds(action_eval)
    for sub in (action_train, action_eval):
        sub.add_argument("--split", choices=("train", "test", "all"))
        sub.add_argument("--ablate-depth", action="store_true",
                         help="Set all depths to a constant")
    action_train.set_defaults(handler=cmd_action_train)
    action_eval.set_defaults(handler=cmd_action_eval)

    report = commands.add_parser("report", help="Write a CSV report")
    report.add_argument("--models", nargs="*", default=[],
                        help="Model files whose loss curves are reported")
    report.add_argument("--data",
                        help="Dataset for per-joint error histograms "
                             "(needs --recon-model)")
    _add_models(report, required=False)
    report.add_argument("--dx-ablation", nargs="?", const="",
                        help="Comma-separated shifts, e.g. 250,500,750; "
                             "without a value the shifts of the "
                             "configuration are used")
    report.add_argument("--stereo-vs-mono", action="store_true",
                        help="Compare stereo and monocular reconstruction")
    report.add_argument("--keypoint-noise", type=float, default=0.0)
    report.add_argument("--plots", help="Directory for SVG plots")
    report.add_argument("--out", help="CSV output (default: stdout)")
    _add_split(report, "test")
    report.set_defaults(handler=cmd_report)
    return parser


def _configure(args) -> StereoPoseConfig:
    config = load_config(args.config) if args.config else StereoPoseConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line interface and return the exit code"""

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return error.code if isinstance(error.code, int) else EXIT_USAGE

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _configure(args)
        return args.handler(args, config)
    except (ParseError, ConfigError, ModelFormatError, ModelKindError,
            DatasetWriteError, CommandError, EmptyDatasetError,
            GenerationExhaustedError, GeometricSearchError,
            OSError) as error:
        print("error: %s" % error, file=sys.stderr)
        return EXIT_IO
    except ValueError as error:
        print("error: %s" % error, file=sys.stderr)
        return EXIT_USAGE
