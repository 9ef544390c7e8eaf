import argparse
import os
import sys
import time

import numpy as np
import torch

import align
import gradchecks
import hog
import image_io
import metrics
import preimage
import visualize
from optimizers import OptimizerConfig
from utils import ConfigError, HogError, ImageIOError, center_crop, write_csv, write_json
from workers import map_fn

IMAGE_EXTENSIONS = ('.png', '.pgm', '.ppm')


class ArgumentParser(argparse.ArgumentParser):
    # Bad flags are configuration errors, not usage exits
    def error(self, message):
        raise ConfigError(message)


def add_hog_flags(p, cell=True, norm_style='norm'):
    if cell:
        p.add_argument('--cell', type=int, default=8, help='Cell size in pixels (even, >= 2)')
        p.add_argument('--bins', type=int, help='Orientation bins (default 9 unsigned, 18 signed)')
        p.add_argument('--mode', choices=tuple(hog.ORIENTATION_RANGE), default='unsigned',
                       help='Fold orientations to [0,180) or keep [0,360)')
    p.add_argument('--no-normalize', action='store_true', help='Skip global contrast normalization')
    p.add_argument('--norm-style', choices=hog.NORM_STYLES, default=norm_style,
                   help='norm: v/sqrt(|v|+eps), squared: v/sqrt(|v|^2+eps)')
    p.add_argument('--eps', type=float, default=1e-4, help='Normalization epsilon')


common = ArgumentParser(add_help=False)
common.add_argument('--seed', type=int, default=0, help='Seed for every random choice')
common.add_argument('--threads', type=int, default=1, help='Worker threads across independent tasks')
common.add_argument('--verbose', action='store_true', help='Print optimizer progress every second')

parser = ArgumentParser(description='Differentiable HOG: extract, invert, align, compare')
subparsers = parser.add_subparsers(dest='command', required=True)

extract_parser = subparsers.add_parser('extract', parents=[common], help='Compute a HOG descriptor file')
extract_parser.add_argument('--input', required=True, help='PNG, PGM or PPM image')
extract_parser.add_argument('--output', required=True, help='Destination .ghog file')
extract_parser.add_argument('--pyramid', action='store_true',
                            help='Also write per-scale descriptors <output>.s{4,16,64}.ghog of the downsampled image')
extract_parser.add_argument('--visualize', help='Render the descriptor as a PNG of oriented glyphs')
add_hog_flags(extract_parser)

invert_parser = subparsers.add_parser('invert', parents=[common], help='Reconstruct an image from a descriptor')
invert_parser.add_argument('--target', nargs='+', required=True,
                           help='Target .ghog file, or one file per scale for multi-more')
invert_parser.add_argument('--schedule', choices=preimage.SCHEDULES, default='single', help='Scale schedule')
invert_parser.add_argument('--xi', type=float, default=1e2, help='Smoothness weight')
invert_parser.add_argument('--xi-decay', action='store_true', help='Decay xi linearly to 0 over each stage')
invert_parser.add_argument('--opt', choices=('momentum', 'dogleg'), default='momentum', help='Solver')
invert_parser.add_argument('--init', choices=preimage.INITS, default='gray', help='Initial estimate')
invert_parser.add_argument('--iters', type=int, default=300, help='Iteration cap per stage')
invert_parser.add_argument('--step', type=float, help='Momentum step size (default 2.5e-4 / max(xi, 1))')
invert_parser.add_argument('--momentum', type=float, default=0.9, help='Momentum coefficient')
invert_parser.add_argument('--tolerance', type=float, default=1e-6,
                           help='Stop when E falls below this, or improves less than this (relative) over 10 iterations')
invert_parser.add_argument('--trust-radius', type=float, default=1.0, help='Initial dogleg trust radius')
invert_parser.add_argument('--output', required=True, help='Reconstructed PNG')
invert_parser.add_argument('--trace', help='CSV of E per iteration')
invert_parser.add_argument('--save-stages', help='Directory for each stage estimate at full resolution')
invert_parser.add_argument('--plot', help='PNG plot of the E trace')
add_hog_flags(invert_parser, cell=False)

align_parser = subparsers.add_parser('align', parents=[common], help='Estimate the pose of a template')
align_parser.add_argument('--template', required=True, help='Template image')
align_parser.add_argument('--target-patch', help='Observed patch image')
align_parser.add_argument('--synthetic', help='Make the target by warping the template with tx,ty,r,sigma')
align_parser.add_argument('--restarts', type=int, default=8, help='Initial rotations spread over 360 degrees')
align_parser.add_argument('--init-pose', help='Starting pose tx,ty,r,sigma for every restart')
align_parser.add_argument('--iters', type=int, default=150, help='Ascent iterations per restart')
align_parser.add_argument('--step', type=float, default=0.1, help='Ascent step in parameter units')
align_parser.add_argument('--momentum', type=float, default=0.9, help='Momentum coefficient')
align_parser.add_argument('--decay', type=float, default=0.98, help='Per-iteration step decay')
align_parser.add_argument('--interleave', default='10,5',
                          help='Iterations on (tx,ty,r), then on sigma, per block')
align_parser.add_argument('--sweep', choices=align.PARAMS, help='Sweep one parameter instead of optimizing')
align_parser.add_argument('--sweep-step', type=float, help='Sweep grid spacing')
align_parser.add_argument('--output', help='JSON pose (or sweep CSV); stdout if omitted')
align_parser.add_argument('--trace', help='CSV of S per restart and iteration')
align_parser.add_argument('--plot', help='PNG plot of the sweep or the restart traces')
# Self-similarity only peaks at the identity pose under the squared style
add_hog_flags(align_parser, norm_style='squared')

gradcheck_parser = subparsers.add_parser('gradcheck', parents=[common], help='Compare gradients to finite differences')
gradcheck_parser.add_argument('--what', choices=gradchecks.TARGETS + ('all',), default='all', help='What to check')
gradcheck_parser.add_argument('--trials', type=int, default=1, help='Random instances per check')
gradcheck_parser.add_argument('--step', type=float, default=1e-5, help='Central difference step')
gradcheck_parser.add_argument('--tol', type=float, default=1e-4, help='Max relative error')
gradcheck_parser.add_argument('--size', type=int, default=64, help='Image size for the HOG checks')
gradcheck_parser.add_argument('--coords', type=int, default=64, help='Coordinates sampled per check')
gradcheck_parser.add_argument('--corrupt-adjoint', action='store_true',
                              help='Scale every analytic gradient by 1.5 (negative control, must fail)')

metrics_parser = subparsers.add_parser('metrics', parents=[common], help='Compare reconstructions to originals')
metrics_parser.add_argument('--a', help='Original image')
metrics_parser.add_argument('--b', help='Reconstructed image')
metrics_parser.add_argument('--suite', help='Directory with a/ and b/ subdirectories of same-named images')
metrics_parser.add_argument('--format', choices=('csv', 'json'), default='csv', help='Output format')
metrics_parser.add_argument('--bins', type=int, default=metrics.MI_BINS, help='Histogram bins for mutual information')
metrics_parser.add_argument('--output', help='Destination file; stdout if omitted')


def hog_config(args):
    return hog.HogConfig.for_mode(args.mode, bins=args.bins, cell_size=args.cell,
                                  normalize=not args.no_normalize, norm_style=args.norm_style,
                                  eps=args.eps).validate()


def load_cropped(path, cell):
    img = image_io.load_image(path)
    cropped = center_crop(img.data, cell)
    if cropped.shape != img.data.shape:
        print('Warning: {} is {}x{}, cropping to {}x{} to fit {}px cells'.format(
            path, img.width, img.height, cropped.shape[1], cropped.shape[0], cell))
    return image_io.Image(cropped)


def check_output_dirs(*paths):
    for path in paths:
        if path and not os.path.isdir(os.path.dirname(path) or '.'):
            raise ImageIOError('Output directory does not exist: {}'.format(os.path.dirname(path)))


def pyramid_path(output, scale):
    root, ext = os.path.splitext(output)
    return '{}.s{}{}'.format(root, scale, ext or '.ghog')


def cmd_extract(args):
    cfg = hog_config(args)
    img = load_cropped(args.input, cfg.cell_size)
    desc = hog.hog_forward(img.data, cfg)
    image_io.write_descriptor(desc, args.output)
    print('Wrote {} descriptor ({} values) to {}'.format(
        'x'.join(str(n) for n in desc.shape), desc.grid.numel(), args.output))
    if args.pyramid:
        for scale, target in sorted(preimage.pyramid_targets(img.data, cfg).items()):
            if scale == 1:
                continue
            path = pyramid_path(args.output, scale)
            image_io.write_descriptor(target, path)
            print('Wrote scale 1/{} descriptor {} to {}'.format(
                scale, 'x'.join(str(n) for n in target.shape), path))
    if args.visualize:
        image_io.save_image(visualize.render_glyphs(desc), args.visualize)
    return 0


def read_targets(paths, cfg_flags, schedule):
    """Maps each target file to its scale, inferred from grid size relative to the largest."""
    descs = [image_io.read_descriptor(path, **cfg_flags) for path in paths]
    if schedule == 'multi-more' and len(paths) == 1:
        for scale in preimage.SCALES[:-1]:
            sibling = pyramid_path(paths[0], scale)
            if os.path.exists(sibling):
                descs.append(image_io.read_descriptor(sibling, **cfg_flags))
    full = max(descs, key=lambda d: d.shape[0])
    targets = {}
    for desc in descs:
        ratio = full.shape[0] // desc.shape[0]
        scale = ratio * ratio
        if full.shape[0] % desc.shape[0] or scale not in preimage.SCALES or scale in targets:
            raise ConfigError('Cannot place a {} descriptor among targets of {}'.format(
                desc.shape, full.shape))
        targets[scale] = desc
    return targets, full.config


def cmd_invert(args):
    opt = OptimizerConfig(method=args.opt, step_size=args.step, momentum=args.momentum,
                          max_iters=args.iters, tolerance=args.tolerance,
                          trust_radius=args.trust_radius,
                          log_every=1.0 if args.verbose else 10.0).validate()
    cfg_flags = dict(normalize=not args.no_normalize, norm_style=args.norm_style, eps=args.eps)
    hog.HogConfig(**cfg_flags).validate()
    if args.save_stages and not os.path.isdir(args.save_stages):
        raise ConfigError('--save-stages directory does not exist: {}'.format(args.save_stages))
    check_output_dirs(args.output, args.trace, args.plot)

    targets, cfg = read_targets(args.target, cfg_flags, args.schedule)
    problem = preimage.ReconstructionProblem(targets, cfg, xi=args.xi, schedule=args.schedule,
                                             init=args.init, seed=args.seed,
                                             xi_decay=args.xi_decay).validate()
    start_time = time.time()
    result = preimage.reconstruct(problem, opt)
    print('Finished {} reconstruction in {:.02f}s, final E {:.6g}'.format(
        args.schedule, time.time() - start_time, result.trace[-1].E))

    image_io.save_image(result.image, args.output)
    if args.trace:
        write_csv(result.trace_rows(), args.trace, columns=['iteration', 'stage', 'E', 'feature', 'smoothness'])
    if args.save_stages:
        for scale, img in result.stage_images():
            image_io.save_image(img, os.path.join(args.save_stages, 'stage_s{}.png'.format(scale)))
    if args.plot:
        visualize.plot_trace(result.trace_rows(), args.plot)
    return 0


def parse_interleave(text):
    try:
        blocks = tuple(int(v) for v in text.split(','))
    except ValueError:
        raise ConfigError('--interleave expects two integers, got {!r}'.format(text))
    if len(blocks) != 2:
        raise ConfigError('--interleave expects two integers, got {!r}'.format(text))
    return blocks


def cmd_align(args):
    cfg = hog_config(args)
    opt = OptimizerConfig(step_size=args.step, momentum=args.momentum, max_iters=args.iters,
                          decay=args.decay, interleave=parse_interleave(args.interleave),
                          log_every=1.0 if args.verbose else 10.0).validate()
    if (args.target_patch is None) == (args.synthetic is None):
        raise ConfigError('Give exactly one of --target-patch and --synthetic')
    truth = align.Pose2D.parse(args.synthetic) if args.synthetic else None
    init = align.Pose2D.parse(args.init_pose) if args.init_pose else align.Pose2D()
    check_output_dirs(args.output, args.trace, args.plot)

    template = load_cropped(args.template, cfg.cell_size)
    if truth is not None:
        patch_shape = template.data.shape[:2]
        patch, _ = align.synthesize_target(template.data, truth, patch_shape, cfg)
    else:
        patch = load_cropped(args.target_patch, cfg.cell_size).data
    problem = align.AlignmentProblem.from_images(template.data, patch, cfg,
                                                 restarts=args.restarts, init=init).validate()

    if args.sweep:
        rows = align.sweep(problem, args.sweep, align.sweep_grid(args.sweep, args.sweep_step), base=init)
        write_csv([{'value': r.value, 'S': r.S, 'dSdparam': r.dS} for r in rows], args.output)
        best = max(rows, key=lambda r: r.S)
        print('Sweep of {}: maximum S={:.6g} at {:g}'.format(args.sweep, best.S, best.value))
        if args.plot:
            visualize.plot_sweep(rows, args.sweep, args.plot)
        return 0

    estimate = align.estimate_pose(problem, opt, threads=args.threads)
    result = estimate.as_dict()
    if truth is not None:
        result['error'] = align.pose_error(estimate.pose, truth)
        print('Pose error: {}'.format(result['error']))
    write_json(result, args.output)
    if args.trace:
        write_csv(estimate.trace_rows(), args.trace,
                  columns=['restart', 'iteration', 'S'] + list(align.PARAMS))
    if args.plot:
        visualize.plot_restarts(estimate.trace_rows(), args.plot)
    return 0


def cmd_gradcheck(args):
    hook = (lambda g: 1.5 * g) if args.corrupt_adjoint else None
    reports = gradchecks.run_checks(args.what, trials=args.trials, step=args.step, tol=args.tol,
                                    size=args.size, seed=args.seed, coords=args.coords,
                                    adjoint_hook=hook)
    print('All {} gradient checks passed'.format(len(reports)))
    return 0


def suite_pairs(directory):
    a_dir, b_dir = os.path.join(directory, 'a'), os.path.join(directory, 'b')
    if not os.path.isdir(a_dir) or not os.path.isdir(b_dir):
        raise ImageIOError('Suite directory {} needs a/ and b/ subdirectories'.format(directory))
    names = sorted(n for n in os.listdir(a_dir) if n.lower().endswith(IMAGE_EXTENSIONS))
    missing = [n for n in names if not os.path.exists(os.path.join(b_dir, n))]
    if missing:
        raise ImageIOError('No reconstruction in {} for {}'.format(b_dir, ', '.join(missing)))
    if not names:
        raise ImageIOError('No images in {}'.format(a_dir))
    return [(n, os.path.join(a_dir, n), os.path.join(b_dir, n)) for n in names]


def cmd_metrics(args):
    if (args.suite is None) == (args.a is None or args.b is None):
        raise ConfigError('Give either --a and --b, or --suite')
    if args.bins < 2:
        raise ConfigError('--bins must be >= 2')
    if args.suite:
        pairs = suite_pairs(args.suite)
    else:
        pairs = [(os.path.basename(args.b), args.a, args.b)]

    def evaluate(pair):
        name, a_path, b_path = pair
        a, b = image_io.load_image(a_path), image_io.load_image(b_path)
        return metrics.compare(a, b, bins=args.bins)

    reports = map_fn(evaluate, pairs, threads=args.threads)
    rows = [dict(name=name, **report.as_dict()) for (name, _, _), report in zip(pairs, reports)]
    if args.suite:
        rows.append(dict(name='mean', **metrics.mean_report(reports).as_dict()))
    if args.format == 'json':
        write_json(rows if args.suite else rows[0], args.output)
    else:
        write_csv(rows, args.output)
    return 0


COMMANDS = {
    'extract': cmd_extract,
    'invert': cmd_invert,
    'align': cmd_align,
    'gradcheck': cmd_gradcheck,
    'metrics': cmd_metrics,
}


def main(argv=None):
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise ConfigError('--threads must be >= 1')
        torch.manual_seed(args.seed)
        np.random.seed(args.seed % 2 ** 32)
        return COMMANDS[args.command](args)
    except HogError as e:
        print('Error: {}'.format(e), file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print('Error: {}'.format(e), file=sys.stderr)
        return ImageIOError.exit_code


if __name__ == '__main__':
    sys.exit(main())
