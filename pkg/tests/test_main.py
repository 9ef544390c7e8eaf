import json
import os

import numpy as np
import pandas as pd
import pytest

import image_io
import main


def save(tmp_path, name, pixels):
    path = str(tmp_path / name)
    image_io.save_image(np.asarray(pixels), path)
    return path


def read_png(path):
    return np.round(image_io.load_image(path).data * 255).astype(int)


@pytest.fixture
def photo(tmp_path, rng):
    import gradchecks
    return save(tmp_path, 'photo.png', gradchecks.smooth_image(rng, 128).numpy())


def test_extract_grid(tmp_path, photo):
    out = str(tmp_path / 'photo.ghog')
    assert main.main(['extract', '--input', photo, '--output', out]) == 0
    desc = image_io.read_descriptor(out)
    assert desc.shape == (16, 16, 9)
    assert os.path.getsize(out) == 28 + 16 * 16 * 9 * 4


def test_extract_constant_image(tmp_path):
    src = save(tmp_path, 'flat.png', np.full((32, 32), 0.5))
    out = str(tmp_path / 'flat.ghog')
    assert main.main(['extract', '--input', src, '--output', out, '--mode', 'signed']) == 0
    payload = open(out, 'rb').read()[28:]
    assert len(payload) == 4 * 4 * 18 * 4
    assert payload == bytes(len(payload))


def test_extract_crops_with_warning(tmp_path, rng, capsys):
    src = save(tmp_path, 'odd.png', rng.uniform(size=(130, 130)))
    out = str(tmp_path / 'odd.ghog')
    assert main.main(['extract', '--input', src, '--output', out]) == 0
    assert 'Warning' in capsys.readouterr().out
    assert image_io.read_descriptor(out).shape == (16, 16, 9)


def test_extract_is_deterministic(tmp_path, photo):
    first, second = str(tmp_path / 'a.ghog'), str(tmp_path / 'b.ghog')
    main.main(['extract', '--input', photo, '--output', first])
    main.main(['extract', '--input', photo, '--output', second])
    assert open(first, 'rb').read() == open(second, 'rb').read()


def test_extract_pyramid_and_visualize(tmp_path, photo):
    out = str(tmp_path / 'photo.ghog')
    glyphs = str(tmp_path / 'glyphs.png')
    assert main.main(['extract', '--input', photo, '--output', out, '--pyramid', '--visualize', glyphs]) == 0
    assert image_io.read_descriptor(str(tmp_path / 'photo.s4.ghog')).shape == (8, 8, 9)
    assert image_io.read_descriptor(str(tmp_path / 'photo.s16.ghog')).shape == (4, 4, 9)
    assert image_io.read_descriptor(str(tmp_path / 'photo.s64.ghog')).shape == (2, 2, 9)
    assert os.path.exists(glyphs)


@pytest.mark.parametrize('argv', [
    ['extract', '--cell', '3'],
    ['extract', '--bins', '1'],
    ['extract', '--frobnicate'],
    ['extract', '--eps', '0'],
])
def test_bad_flags_exit_3(tmp_path, photo, argv):
    argv = argv[:1] + ['--input', photo, '--output', str(tmp_path / 'x.ghog')] + argv[1:]
    assert main.main(argv) == 3
    assert not os.path.exists(str(tmp_path / 'x.ghog'))


def test_extract_tiny_image_exits_3(tmp_path):
    src = save(tmp_path, 'tiny.png', np.full((2, 2), 0.5))
    out = str(tmp_path / 'tiny.ghog')
    assert main.main(['extract', '--input', src, '--output', out, '--cell', '2']) == 3
    assert not os.path.exists(out)


def test_missing_command_exits_3():
    assert main.main([]) == 3


def test_missing_input_exits_2(tmp_path):
    argv = ['extract', '--input', str(tmp_path / 'nope.png'), '--output', str(tmp_path / 'x.ghog')]
    assert main.main(argv) == 2


def extract(tmp_path, pixels, name='target', *flags):
    src = save(tmp_path, name + '.png', pixels)
    out = str(tmp_path / (name + '.ghog'))
    assert main.main(['extract', '--input', src, '--output', out] + list(flags)) == 0
    return out


def test_invert_zero_iterations(tmp_path, smooth_image):
    target = extract(tmp_path, smooth_image.numpy())
    out, trace = str(tmp_path / 'rec.png'), str(tmp_path / 'trace.csv')
    argv = ['invert', '--target', target, '--iters', '0', '--output', out, '--trace', trace]
    assert main.main(argv) == 0
    assert (read_png(out) == 128).all()
    assert open(trace).readline() == 'iteration,stage,E,feature,smoothness\n'
    assert len(pd.read_csv(trace)) == 1


def test_invert_flat_target(tmp_path):
    target = extract(tmp_path, np.full((32, 32), 0.25))
    out = str(tmp_path / 'rec.png')
    argv = ['invert', '--target', target, '--init', 'noise', '--seed', '3', '--step', '2e-6',
            '--momentum', '0.5', '--iters', '300', '--tolerance', '1e-9', '--output', out]
    assert main.main(argv) == 0
    assert image_io.load_image(out).data.std() < 0.01


def test_invert_multi_more_finds_pyramid(tmp_path, smooth_image):
    target = extract(tmp_path, smooth_image.numpy(), 'target', '--pyramid')
    out, trace, stages = str(tmp_path / 'rec.png'), str(tmp_path / 'trace.csv'), tmp_path / 'stages'
    stages.mkdir()
    argv = ['invert', '--target', target, '--schedule', 'multi-more', '--iters', '2',
            '--output', out, '--trace', trace, '--save-stages', str(stages)]
    assert main.main(argv) == 0
    assert sorted(pd.read_csv(trace)['stage'].unique().tolist()) == [1, 4, 16]
    assert sorted(os.listdir(str(stages))) == ['stage_s1.png', 'stage_s16.png', 'stage_s4.png']


def test_invert_rejects_bad_settings(tmp_path, smooth_image):
    target = extract(tmp_path, smooth_image.numpy())
    out = str(tmp_path / 'rec.png')
    assert main.main(['invert', '--target', target, '--output', out, '--momentum', '1.5']) == 3
    assert main.main(['invert', '--target', target, '--output', out, '--schedule', 'multi-more']) == 3
    assert main.main(['invert', '--target', str(tmp_path / 'none.ghog'), '--output', out]) == 2
    assert not os.path.exists(out)


def test_invert_checks_outputs_before_running(tmp_path, smooth_image):
    target = extract(tmp_path, smooth_image.numpy())
    out = str(tmp_path / 'rec.png')
    argv = ['invert', '--target', target, '--iters', '2', '--output', out,
            '--trace', str(tmp_path / 'missing' / 'trace.csv')]
    assert main.main(argv) == 2
    assert not os.path.exists(out)


@pytest.fixture
def template_png(tmp_path, template):
    return save(tmp_path, 'template.png', template.numpy())


def test_align_sweep_peaks_at_identity(tmp_path, template_png):
    out = str(tmp_path / 'sweep.csv')
    argv = ['align', '--template', template_png, '--target-patch', template_png, '--sweep', 'r',
            '--sweep-step', '10', '--norm-style', 'squared', '--output', out]
    assert main.main(argv) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ['value', 'S', 'dSdparam']
    assert len(frame) == 37
    assert frame['value'][frame['S'].idxmax()] == 0.0


def align_similarity(tmp_path, template_png, restarts):
    out = str(tmp_path / 'pose{}.json'.format(restarts))
    argv = ['align', '--template', template_png, '--synthetic', '0,0,180,0', '--restarts', str(restarts),
            '--iters', '40', '--norm-style', 'squared', '--output', out]
    assert main.main(argv) == 0
    with open(out) as fp:
        return json.load(fp)


def test_align_needs_restarts_for_half_turn(tmp_path, template_png):
    one = align_similarity(tmp_path, template_png, 1)
    eight = align_similarity(tmp_path, template_png, 8)
    assert one['S'] < eight['S']
    assert eight['error']['r'] <= 5.0
    assert set(eight) >= {'tx', 'ty', 'r', 'sigma', 'S'}


def test_align_trace_and_flags(tmp_path, template_png):
    out, trace = str(tmp_path / 'pose.json'), str(tmp_path / 'trace.csv')
    argv = ['align', '--template', template_png, '--target-patch', template_png, '--restarts', '2',
            '--iters', '5', '--output', out, '--trace', trace]
    assert main.main(argv) == 0
    frame = pd.read_csv(trace)
    assert list(frame.columns) == ['restart', 'iteration', 'S', 'tx', 'ty', 'r', 'sigma']
    assert len(frame) == 12
    base = ['align', '--template', template_png, '--output', out]
    assert main.main(base) == 3
    assert main.main(base + ['--synthetic', '1,2']) == 3
    assert main.main(base + ['--target-patch', template_png, '--interleave', '10']) == 3


def test_align_self_alignment_with_default_flags(tmp_path, template_png):
    out = str(tmp_path / 'pose.json')
    argv = ['align', '--template', template_png, '--target-patch', template_png, '--restarts', '2',
            '--iters', '30', '--output', out]
    assert main.main(argv) == 0
    with open(out) as fp:
        pose = json.load(fp)
    assert abs(pose['tx']) <= 0.5 and abs(pose['ty']) <= 0.5
    assert abs(pose['r']) <= 1.0 and abs(pose['sigma']) <= 0.02


def test_align_all_restarts_diverge(tmp_path, template_png):
    argv = ['align', '--template', template_png, '--target-patch', template_png, '--restarts', '2',
            '--init-pose', '0,0,0,4', '--iters', '3', '--output', str(tmp_path / 'pose.json')]
    assert main.main(argv) == 4


def test_gradcheck_primitives():
    assert main.main(['gradcheck', '--what', 'primitives']) == 0


def test_gradcheck_corrupt_adjoint_fails():
    assert main.main(['gradcheck', '--what', 'primitives', '--corrupt-adjoint']) == 5


def test_metrics_self_pair(tmp_path, smooth_image):
    img = save(tmp_path, 'a.png', smooth_image.numpy())
    out = str(tmp_path / 'm.json')
    assert main.main(['metrics', '--a', img, '--b', img, '--format', 'json', '--output', out]) == 0
    with open(out) as fp:
        report = json.load(fp)
    assert report['cross_correlation'] == pytest.approx(1.0)
    assert report['ssim'] == pytest.approx(1.0)
    assert report['mutual_information'] > 0


def make_suite(tmp_path, rng, count=3):
    suite = tmp_path / 'suite'
    for sub in ('a', 'b'):
        (suite / sub).mkdir(parents=True)
    for k in range(count):
        original = rng.uniform(size=(16, 16))
        noisy = np.clip(original + rng.uniform(-0.1, 0.1, size=original.shape), 0, 1)
        save(suite / 'a', 'img{}.png'.format(k), original)
        save(suite / 'b', 'img{}.png'.format(k), noisy)
    return str(suite)


def test_metrics_suite_formats_agree(tmp_path, rng):
    suite = make_suite(tmp_path, rng)
    csv_out, json_out = str(tmp_path / 'm.csv'), str(tmp_path / 'm.json')
    assert main.main(['metrics', '--suite', suite, '--output', csv_out]) == 0
    assert main.main(['metrics', '--suite', suite, '--format', 'json', '--output', json_out,
                      '--threads', '2']) == 0
    frame = pd.read_csv(csv_out)
    with open(json_out) as fp:
        rows = json.load(fp)
    assert frame['name'].tolist() == ['img0.png', 'img1.png', 'img2.png', 'mean']
    assert len(rows) == 4
    for column in ('cross_correlation', 'raw_correlation', 'mutual_information', 'ssim'):
        assert frame[column].tolist() == pytest.approx([row[column] for row in rows], rel=1e-15)


def test_metrics_errors(tmp_path, rng):
    img = save(tmp_path, 'a.png', rng.uniform(size=(16, 16)))
    small = save(tmp_path, 'b.png', rng.uniform(size=(16, 12)))
    assert main.main(['metrics', '--a', img]) == 3
    assert main.main(['metrics', '--a', img, '--b', small]) == 3
    assert main.main(['metrics', '--suite', str(tmp_path / 'missing')]) == 2
