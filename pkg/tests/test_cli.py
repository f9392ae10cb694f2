import json
import os

import numpy as np
import pandas as pd
import pytest

from smokeflow.cli import build_run_config, load_config_file, main
from smokeflow.experiments import textured_pair
from smokeflow.fields import FlowField
from smokeflow.imgio import ImageFrame, read_flo, read_image, write_flo, write_image
from smokeflow.utils import ConfigError, PreconditionError

QUICK = ['--iters', '3', '--theta', '0.25']


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    response = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    return code, response


@pytest.fixture
def frames(tmp_path):
    frame1, frame2, gt = textured_pair(size=32, shift=(1, 0), seed=0)
    paths = {
        'frame1': str(tmp_path / 'f1.png'),
        'frame2': str(tmp_path / 'f2.png'),
        'gt': str(tmp_path / 'gt.flo'),
    }
    write_image(frame1, paths['frame1'])
    write_image(frame2, paths['frame2'])
    write_flo(gt, paths['gt'])
    return paths


def _read(path):
    with open(path, 'rb') as f:
        return f.read()


def test_flow_command(capsys, frames, tmp_path):
    out = tmp_path / 'out.flo'
    diag = tmp_path / 'diag.jsonl'
    trace = tmp_path / 'trace.csv'
    code, response = run(capsys, 'flow', '--frame1', frames['frame1'], '--frame2', frames['frame2'],
                         '--out', out, '--diagnostics', diag, '--trace', trace, *QUICK)
    assert code == 0
    assert response['success'] is True
    assert response['iterations'] == 3
    assert response['stability']['stable'] is True
    assert read_flo(str(out)).shape == (32, 32)
    assert len(diag.read_text().splitlines()) == 3
    assert len(pd.read_csv(trace)) == 3


def test_published_flags_are_accepted(capsys, frames, tmp_path):
    code, response = run(capsys, 'flow', '--frame1', frames['frame1'], '--frame2', frames['frame2'],
                         '--out', tmp_path / 'p.flo', '--alpha', '0.5', '--lambda', '225', '--theta', '0.001',
                         '--nu', '1000', '--iters', '2', '--grid-spacing', '1', '--share-levelsets')
    assert code == 0, response
    assert response['iterations'] == 2


def test_missing_input_exits_with_one(capsys, tmp_path):
    code, response = run(capsys, 'colorize', tmp_path / 'absent.flo')
    assert code == 1
    assert response['success'] is False
    assert response['error'].startswith('MissingFile')


def test_bad_magic_is_reported(capsys, frames, tmp_path):
    bad = tmp_path / 'bad.flo'
    bad.write_bytes(np.array([1.0], '<f4').tobytes() + np.array([1, 1], '<i4').tobytes() + bytes(8))
    code, response = run(capsys, 'eval', '--pred', bad, '--gt', frames['gt'], '--image', frames['frame1'])
    assert code == 1
    assert response['error'].startswith('BadMagic')


def test_eval_against_itself(capsys, frames):
    code, response = run(capsys, 'eval', '--pred', frames['gt'], '--gt', frames['gt'],
                         '--image', frames['frame1'], '--image2', frames['frame2'])
    assert code == 0
    assert response['aepe'] == 0.0
    assert response['aae'] == 0.0
    assert response['valid_fraction'] == 1.0


def test_config_file_and_flag_precedence(capsys, frames, tmp_path):
    config = tmp_path / 'config.json'
    config.write_text(json.dumps({'outer_iters': 2, 'theta': 0.25}))
    args = ['flow', '--frame1', frames['frame1'], '--frame2', frames['frame2'], '--out', tmp_path / 'c.flo',
            '--config', config]
    code, response = run(capsys, *args)
    assert code == 0 and response['iterations'] == 2
    code, response = run(capsys, *args, '--iters', '4')
    assert code == 0 and response['iterations'] == 4


def test_config_errors_name_the_key(capsys, frames, tmp_path):
    config = tmp_path / 'config.json'
    config.write_text(json.dumps({'outer_iterations': 2}))
    code, response = run(capsys, 'ssim', frames['frame1'], frames['frame1'], '--config', config)
    assert code == 1
    assert 'ConfigError' in response['error'] and 'outer_iterations' in response['error']

    code, response = run(capsys, 'ssim', frames['frame1'], frames['frame1'], '--theta', 'abc')
    assert code == 1 and 'theta' in response['error']

    code, response = run(capsys, 'ssim', frames['frame1'], frames['frame1'], '--theta', '0')
    assert code == 1 and response['error'].startswith('PreconditionError')

    code, response = run(capsys, 'frobnicate')
    assert code == 1


def test_build_run_config():
    config = build_run_config({'K': '3', 'lam': 100}, {'lam': '50', 'noise_kind': 'poisson'})
    assert config.gmm.K == 3
    assert config.solver.lam == 50.0
    assert config.noise.kind == 'poisson'
    with pytest.raises(ConfigError) as err:
        build_run_config({'noise_kind': 'speckle'})
    assert err.value.key == 'noise_kind'
    with pytest.raises(ConfigError):
        build_run_config({'log_level': 'LOUD'})
    with pytest.raises(ConfigError):
        build_run_config({'outer_iters': 2.5})
    with pytest.raises(PreconditionError):
        build_run_config({'white_tol': -1})


def test_load_config_file_rejects_non_objects(tmp_path):
    path = tmp_path / 'list.json'
    path.write_text('[1, 2]')
    with pytest.raises(ConfigError):
        load_config_file(str(path))


def test_pipeline_matches_stage_commands(capsys, frames, tmp_path):
    together = tmp_path / 'together'
    staged = tmp_path / 'staged'
    staged.mkdir()
    code, response = run(capsys, 'pipeline', '--frame1', frames['frame1'], '--frame2', frames['frame2'],
                         '--out', together, *QUICK)
    assert code == 0, response

    assert run(capsys, 'flow', '--frame1', frames['frame1'], '--frame2', frames['frame2'],
               '--out', staged / 'pair.flo', *QUICK)[0] == 0
    assert run(capsys, 'colorize', staged / 'pair.flo')[0] == 0
    assert run(capsys, 'segment', staged / 'pair_color.png')[0] == 0

    for name in ('pair.flo', 'pair_color.png', 'pair_mask.png', 'pair_fused.png'):
        assert _read(together / name) == _read(staged / name), name


def test_pipeline_is_deterministic(capsys, frames, tmp_path):
    for name in ('a', 'b'):
        code, response = run(capsys, 'pipeline', '--frame1', frames['frame1'], '--frame2', frames['frame2'],
                             '--out', tmp_path / name, '--gt', frames['gt'], *QUICK)
        assert code == 0, response
        assert 'aepe' in response['metrics']
    for name in ('pair.flo', 'pair_color.png', 'pair_mask.png', 'pair_fused.png', 'pair_metrics.json'):
        assert _read(tmp_path / 'a' / name) == _read(tmp_path / 'b' / name), name


def test_batch_is_independent_of_workers(capsys, frames, tmp_path):
    pairs = tmp_path / 'pairs.csv'
    pd.DataFrame([
        {'frame1': 'f1.png', 'frame2': 'f2.png', 'name': 'fwd'},
        {'frame1': 'f2.png', 'frame2': 'f1.png', 'name': 'back'},
        {'frame1': 'f1.png', 'frame2': 'nowhere.png', 'name': 'broken'},
    ]).to_csv(pairs, index=False)

    manifests = {}
    for workers in (1, 2):
        out = tmp_path / f"w{workers}"
        code, response = run(capsys, 'batch', '--pairs', pairs, '--out', out, '--workers', workers, *QUICK)
        assert code == 0, response
        assert response['pairs'] == 3 and response['failed'] == 1
        manifests[workers] = pd.read_csv(response['manifest'])

    for workers in (1, 2):
        status = manifests[workers].set_index('name')['status']
        assert status['fwd'] == 'ok' and status['back'] == 'ok'
        assert status['broken'].startswith('MissingFile')
    for name in ('fwd_mask.png', 'fwd_color.png', 'back.flo', 'fwd_frame.png'):
        assert _read(tmp_path / 'w1' / name) == _read(tmp_path / 'w2' / name), name
    assert read_image(str(tmp_path / 'w1' / 'fwd_frame.png')).shape == (32, 32)


def test_segment_writes_model(capsys, tmp_path):
    flow = FlowField(np.zeros((16, 16)), np.zeros((16, 16)))
    flow.v[4:12, 4:12] = -1.0
    flo = tmp_path / 'm.flo'
    write_flo(flow, str(flo))
    assert run(capsys, 'colorize', flo, '--max-mag', '1')[0] == 0
    code, response = run(capsys, 'segment', tmp_path / 'm_color.png', '--model', tmp_path / 'model.json')
    assert code == 0
    assert response['smoke_fraction'] == pytest.approx(0.25)
    assert json.loads((tmp_path / 'model.json').read_text())['K'] == 2


def test_ssim_and_noise_commands(capsys, frames, tmp_path):
    code, response = run(capsys, 'ssim', frames['frame1'], frames['frame1'])
    assert code == 0 and response['ssim'] == pytest.approx(1.0)

    noisy = tmp_path / 'noisy.png'
    code, response = run(capsys, 'noise', frames['frame1'], '--out', noisy, '--noise-kind', 'salt_pepper',
                         '--noise-density', '0.05', '--noise-seed', '3')
    assert code == 0
    assert response['noise']['kind'] == 'salt_pepper'
    assert os.path.isfile(noisy)
    code, response = run(capsys, 'ssim', frames['frame1'], noisy)
    assert code == 0 and response['ssim'] < 1.0


def test_experiment_and_channels_commands(capsys, tmp_path):
    table = tmp_path / 'channels.csv'
    code, response = run(capsys, 'experiment', '--name', 'channels', '--size', '16', '--out', table, *QUICK)
    assert code == 0, response
    assert [row['channel'] for row in response['rows']] == ['R', 'G', 'B']
    assert len(pd.read_csv(table)) == 3

    white = tmp_path / 'white.png'
    write_image(ImageFrame(np.ones((8, 8, 3))), str(white))
    code, response = run(capsys, 'channels', white)
    assert code == 0
    assert all(row['dominance'] == 0.0 for row in response['rows'])

    code, response = run(capsys, 'experiment', '--name', 'unknown')
    assert code == 1


def test_non_positive_max_mag_exits_with_one(capsys, tmp_path):
    flo = tmp_path / 'z.flo'
    write_flo(FlowField(np.ones((8, 8)), np.zeros((8, 8))), str(flo))
    code, response = run(capsys, 'colorize', flo, '--max-mag', '0')
    assert code == 1
    assert response['error'].startswith('PreconditionError')


def test_batch_keeps_repeated_names_apart(capsys, frames, tmp_path):
    pairs = tmp_path / 'pairs.csv'
    pd.DataFrame([
        {'frame1': 'f1.png', 'frame2': 'f2.png', 'name': 'dup'},
        {'frame1': 'f2.png', 'frame2': 'f1.png', 'name': 'dup'},
    ]).to_csv(pairs, index=False)
    out = tmp_path / 'batch'
    code, response = run(capsys, 'batch', '--pairs', pairs, '--out', out, *QUICK)
    assert code == 0, response
    manifest = pd.read_csv(response['manifest'])
    assert manifest['name'].tolist() == ['dup_0000', 'dup_0001']
    assert (manifest['status'] == 'ok').all()
    assert _read(out / 'dup_0000.flo') != _read(out / 'dup_0001.flo')
