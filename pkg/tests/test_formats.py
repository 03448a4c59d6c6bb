import json
import struct
from collections import OrderedDict

import numpy as np
import pytest

from fields.grid import DisplacementField, Volume
from formats.checkpoint import read_checkpoint, write_checkpoint
from formats.documents import (
    Manifest, ManifestCase, read_keypoint_metadata, read_keypoints, read_manifest, write_keypoints,
    write_manifest,
)
from formats.volume_io import (
    read_field, read_labels, read_volume, write_container, write_field, write_labels, write_pgm,
    write_volume,
)
from keypoints.keypoint_set import KeypointSet
from utils.errors import FormatError


def header_length(path):
    return struct.unpack('<I', path.read_bytes()[:4])[0]


class TestVolumeFiles:
    def test_volume_roundtrip(self, tmp_path, aniso_grid, rng):
        data = rng.normal(size=aniso_grid.dims).astype(np.float32).astype(np.float64)
        path = write_volume(tmp_path / "image.sfv", Volume(aniso_grid, data))
        restored = read_volume(path)
        assert restored.grid == aniso_grid
        np.testing.assert_array_equal(restored.data, data)

    def test_header_contents(self, tmp_path, small_grid):
        path = write_field(tmp_path / "phi.sff", DisplacementField.zeros(small_grid))
        length = header_length(path)
        header = json.loads(path.read_bytes()[4:4 + length])
        assert header['magic'] == "SFF1" and header['channels'] == 3 and header['dtype'] == 'f32'
        assert path.stat().st_size == 4 + length + 8 ** 3 * 3 * 4

    def test_field_layout_is_channel_interleaved(self, tmp_path, small_grid, rng):
        vectors = rng.normal(size=small_grid.dims + (3,)).astype(np.float32)
        path = write_field(tmp_path / "phi.sff", DisplacementField(small_grid, vectors.astype(np.float64)))
        payload = path.read_bytes()[4 + header_length(path):]
        first = np.frombuffer(payload[:12], dtype='<f4')
        np.testing.assert_array_equal(first, vectors[0, 0, 0])
        np.testing.assert_array_equal(read_field(path).vectors, vectors)

    def test_labels_roundtrip(self, tmp_path, cube_labels):
        restored = read_labels(write_labels(tmp_path / "labels.sfv", cube_labels))
        np.testing.assert_array_equal(restored.labels, cube_labels.labels)

    def test_bad_magic(self, tmp_path, small_grid):
        path = write_field(tmp_path / "phi.sff", DisplacementField.zeros(small_grid))
        with pytest.raises(FormatError, match="magic") as info:
            read_volume(path)
        assert info.value.expected == "SFV1" and info.value.actual == "SFF1"

    def test_truncated_payload(self, tmp_path, small_grid):
        path = write_volume(tmp_path / "image.sfv", Volume(small_grid, np.zeros(small_grid.dims)))
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(FormatError, match="truncated") as info:
            read_volume(path)
        assert info.value.byte_offset == path.stat().st_size

    def test_trailing_bytes(self, tmp_path, small_grid):
        path = write_volume(tmp_path / "image.sfv", Volume(small_grid, np.zeros(small_grid.dims)))
        path.write_bytes(path.read_bytes() + b"\x00" * 4)
        with pytest.raises(FormatError, match="trailing"):
            read_volume(path)

    def test_non_finite_payload(self, tmp_path, small_grid):
        path = write_volume(tmp_path / "image.sfv", Volume(small_grid, np.zeros(small_grid.dims)))
        raw = bytearray(path.read_bytes())
        offset = 4 + header_length(path) + 4 * 5
        raw[offset:offset + 4] = struct.pack('<f', float('nan'))
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="non-finite") as info:
            read_volume(path)
        assert info.value.byte_offset == offset

    def test_labels_outside_code_book(self, tmp_path, small_grid):
        data = np.zeros(small_grid.dims)
        data[1, 1, 1] = 7.0
        path = write_volume(tmp_path / "labels.sfv", Volume(small_grid, data))
        with pytest.raises(FormatError, match="code book"):
            read_labels(path)

    def test_bad_dims(self, tmp_path):
        header = {'magic': 'SFV1', 'dims': [4, 4], 'spacing': [1, 1, 1], 'origin': [0, 0, 0],
                  'dtype': 'f32', 'channels': 1}
        path = write_container(tmp_path / "bad.sfv", header, b"")
        with pytest.raises(FormatError, match="dims"):
            read_volume(path)

    def test_header_not_json(self, tmp_path):
        path = tmp_path / "garbage.sfv"
        path.write_bytes(struct.pack('<I', 3) + b"{{{")
        with pytest.raises(FormatError, match="JSON"):
            read_volume(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError, match="not found"):
            read_field(tmp_path / "nope.sff")

    def test_pgm(self, tmp_path, rng):
        path = write_pgm(tmp_path / "slice.pgm", rng.normal(size=(5, 7)))
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n7 5\n255\n")
        assert len(raw) == len(b"P5\n7 5\n255\n") + 35


class TestKeypointDocument:
    def test_roundtrip(self, tmp_path, aniso_grid, rng):
        points = aniso_grid.index_to_world(rng.uniform(0, 8, size=(6, 3)))
        keypoints = KeypointSet(points, rng.normal(size=(6, 3)), aniso_grid)
        path = write_keypoints(tmp_path / "kp.json", keypoints, {'case_id': 'case_0001', 'variant': 2})
        restored = read_keypoints(path)
        np.testing.assert_array_equal(restored.points, keypoints.points)
        np.testing.assert_array_equal(restored.displacements, keypoints.displacements)
        assert read_keypoint_metadata(path) == {'case_id': 'case_0001', 'variant': 2}

    def test_wrong_format(self, tmp_path):
        path = tmp_path / "kp.json"
        path.write_text(json.dumps({'format': 'something-else'}))
        with pytest.raises(FormatError):
            read_keypoints(path)

    def test_malformed_entries(self, tmp_path, small_grid):
        path = tmp_path / "kp.json"
        path.write_text(json.dumps({'format': 'brainshift-keypoints/1', 'grid': small_grid.to_dict(),
                                    'keypoints': [{'x': [1, 2, 3]}]}))
        with pytest.raises(FormatError, match="malformed"):
            read_keypoints(path)


def manifest_with_case(root, grid, split='train'):
    case = ManifestCase(
        case_id="case_0000", index=0, seed=3, split=split, image="case_0000/image.sfv",
        labels="case_0000/labels.sfv", fields=["case_0000/phi_00.sff"], gravities=[[0.0, 0.0, 1.0]],
        base_gravity=[0.0, 0.0, 1.0], craniotomy_point=[1.0, 2.0, 3.0], tumor_center=[4.0, 4.0, 4.0],
        tumor_radius=2.0, edema_thickness=1.0)
    return Manifest(seed=3, grid=grid, sim_params={'K': 1}, split_fractions=[0.75, 0.1, 0.15],
                    cases=[case], root=root)


class TestManifest:
    def test_roundtrip(self, tmp_path, small_grid):
        manifest = manifest_with_case(tmp_path, small_grid)
        path = write_manifest(tmp_path / "manifest.json", manifest)
        restored = read_manifest(path, check_paths=False)
        assert restored.cases == manifest.cases
        assert restored.grid == small_grid
        assert restored.split_counts() == {'train': 1, 'val': 0, 'test': 0}

    def test_missing_artifact(self, tmp_path, small_grid):
        path = write_manifest(tmp_path / "manifest.json", manifest_with_case(tmp_path, small_grid))
        with pytest.raises(FormatError, match="missing file"):
            read_manifest(path)

    def test_unknown_split(self, tmp_path, small_grid):
        path = write_manifest(tmp_path / "manifest.json", manifest_with_case(tmp_path, small_grid, 'holdout'))
        with pytest.raises(FormatError, match="split"):
            read_manifest(path, check_paths=False)

    def test_missing_field(self, tmp_path, small_grid):
        document = manifest_with_case(tmp_path, small_grid).to_dict()
        del document['cases'][0]['tumor_radius']
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(document))
        with pytest.raises(FormatError, match="malformed"):
            read_manifest(path, check_paths=False)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        params = OrderedDict([('a.weight', rng.normal(size=(2, 3))), ('a.bias', rng.normal(size=2))])
        path = write_checkpoint(tmp_path / "m.ckpt", params, {'epoch': 4, 'seed': 1})
        header, restored = read_checkpoint(path)
        assert header['epoch'] == 4 and header['dtype'] == 'f64'
        assert list(restored) == ['a.weight', 'a.bias']
        for name in params:
            np.testing.assert_array_equal(restored[name], params[name])

    def test_truncated(self, tmp_path, rng):
        path = write_checkpoint(tmp_path / "m.ckpt", OrderedDict([('w', rng.normal(size=4))]), {})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="size mismatch"):
            read_checkpoint(path)

    def test_volume_is_not_a_checkpoint(self, tmp_path, small_grid):
        path = write_volume(tmp_path / "image.sfv", Volume(small_grid, np.zeros(small_grid.dims)))
        with pytest.raises(FormatError, match="magic"):
            read_checkpoint(path)
