"""
On-disk formats: scene bundles, Gaussian set files and checkpoints.

Scene bundle (one directory per object):
    scene.json      procedural geometry, joints and motion ranges
    cameras.json    {"resolution": [H, W], "cameras": [{"t", "q", "f"}, ...]} world-to-camera, one per view
    joints.json     {"joints": [...], "states": [[s_0 .. s_K-1], ...]} normalized states per state index
    canonical.json  {"R0", "t0", "r_bar"} frame of camera 0
    frames/<s>_<v>.rgb.png     8-bit RGB
    frames/<s>_<v>.depth.f32   H*W little-endian f32, z-depth, 0 on background
    frames/<s>_<v>.labels.i32  H*W little-endian i32 part labels
    frames/<s>_<v>.joint.f32   H*W*11 little-endian f32 ground-truth joint map (canonical frame)

Gaussian set (one directory):
    gaussians.bin         b"AGS1", u32 version, u32 count, count x 86 f32
                          (mu, log-scale, quat, opacity, SH 25x3; SH DC carries the +0.5 color offset convention)
    gaussians.joints.bin  count x (11 f32 joint vector, i32 part label)
    parts.json            {"version": 1, "parts": [PartJoint, ...]} part k at index k-1

Checkpoint: b"ARTK", u32 version, u32 header length, JSON header
(model config, stage, step, parameter names and shapes), then f32 blobs in
header order.
"""
import json
import struct
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from PIL import Image

from src.models import (
    ArticulatedScene,
    CameraPose,
    CanonicalFrame,
    GaussianSet,
    JointMap,
    PartJoint,
    PartLabelMap,
    RenderedFrame,
)
from src.models.gaussian import GAUSSIAN_PARAM_COUNT
from src.models.maps import JOINT_CHANNELS
from src.utils import StorageError, setup_logger

logger = setup_logger(__name__)

GAUSSIAN_MAGIC = b'AGS1'
GAUSSIAN_VERSION = 1
CHECKPOINT_MAGIC = b'ARTK'
CHECKPOINT_VERSION = 1
BUNDLE_VERSION = 1

JOINT_RECORD = np.dtype([('joint', '<f4', (JOINT_CHANNELS,)), ('label', '<i4')])

PathLike = Union[str, Path]


def _write_json(path: Path, data: Any) -> None:
    try:
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise StorageError(f"failed to write {path}: {e}", details={'path': str(path)}) from e


def _read_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise StorageError(f"failed to read {path}: {e}", details={'path': str(path)}) from e


def _read_bytes(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise StorageError(f"failed to read {path}: {e}", details={'path': str(path)}) from e


def _write_bytes(path: Path, data: bytes) -> None:
    try:
        path.write_bytes(data)
    except OSError as e:
        raise StorageError(f"failed to write {path}: {e}", details={'path': str(path)}) from e


def png_bytes(rgb: np.ndarray) -> bytes:
    buffer = BytesIO()
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(buffer, format='PNG')
    return buffer.getvalue()


def save_png(path: PathLike, image: np.ndarray) -> None:
    """Save an (H, W, 3) image; floats are taken as [0, 1]."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    _write_bytes(Path(path), png_bytes(image))


def load_png(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert('RGB'), dtype=np.uint8)
    except OSError as e:
        raise StorageError(f"failed to read {path}: {e}", details={'path': str(path)}) from e


@dataclass
class SceneBundle:
    """A scene bundle's metadata; frames are loaded on demand."""
    root: Path
    object_id: str
    scene: ArticulatedScene
    cameras: List[CameraPose]
    states: np.ndarray
    canonical: CanonicalFrame
    resolution: Tuple[int, int]

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    @property
    def split(self) -> str:
        return 'single' if self.scene.n_joints <= 1 else 'multi'

    def frame_path(self, state: int, view: int, suffix: str) -> Path:
        return self.root / 'frames' / f"{state}_{view}.{suffix}"


@dataclass
class FrameRecord:
    """One stored frame with its ground-truth joint map."""
    frame: RenderedFrame
    joints: JointMap


class StorageService:
    """Reads and writes every artikin on-disk format."""

    # Scene bundles

    def write_manifest(self, out_dir: PathLike, entries: List[Dict[str, Any]], seed: int) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / 'manifest.json'
        _write_json(path, {'version': BUNDLE_VERSION, 'seed': seed, 'objects': entries})
        return path

    def read_manifest(self, root: PathLike) -> Dict[str, Any]:
        path = Path(root) / 'manifest.json'
        if not path.is_file():
            raise StorageError(f"no manifest in {root}", details={'path': str(path)})
        return _read_json(path)

    def write_bundle_metadata(self, root: PathLike, scene: ArticulatedScene, cameras: List[CameraPose],
                              states: np.ndarray, canonical: CanonicalFrame, resolution: Tuple[int, int]) -> None:
        root = Path(root)
        try:
            (root / 'frames').mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageError(f"cannot create bundle {root}: {e}", details={'path': str(root)}) from e
        _write_json(root / 'scene.json', scene.to_dict())
        _write_json(root / 'cameras.json', {'resolution': list(resolution),
                                            'cameras': [c.to_dict() for c in cameras]})
        _write_json(root / 'joints.json', {'joints': [j.to_dict() for j in scene.joints],
                                           'states': np.asarray(states).tolist()})
        _write_json(root / 'canonical.json', canonical.to_dict())

    def write_frame(self, bundle_root: PathLike, state: int, view: int,
                    frame: RenderedFrame, joints: JointMap) -> None:
        base = Path(bundle_root) / 'frames'
        stem = f"{state}_{view}"
        _write_bytes(base / f"{stem}.rgb.png", png_bytes(frame.rgb))
        _write_bytes(base / f"{stem}.depth.f32", frame.depth.astype('<f4').tobytes())
        _write_bytes(base / f"{stem}.labels.i32", frame.labels.labels.astype('<i4').tobytes())
        _write_bytes(base / f"{stem}.joint.f32", joints.to_bytes())

    def load_bundle(self, root: PathLike) -> SceneBundle:
        root = Path(root)
        if not root.is_dir():
            raise StorageError(f"scene bundle not found: {root}", details={'path': str(root)})
        cams = _read_json(root / 'cameras.json')
        joints = _read_json(root / 'joints.json')
        states = np.asarray(joints.get('states', []), dtype=np.float64)
        scene = ArticulatedScene.from_dict(_read_json(root / 'scene.json'))
        return SceneBundle(
            root=root,
            object_id=root.name,
            scene=scene,
            cameras=[CameraPose.from_dict(c) for c in cams['cameras']],
            states=states.reshape(len(states), scene.n_joints),
            canonical=CanonicalFrame.from_dict(_read_json(root / 'canonical.json')),
            resolution=tuple(cams['resolution']),
        )

    def load_frame(self, bundle: SceneBundle, state: int, view: int) -> FrameRecord:
        h, w = bundle.resolution
        depth = np.frombuffer(_read_bytes(bundle.frame_path(state, view, 'depth.f32')), dtype='<f4')
        labels = np.frombuffer(_read_bytes(bundle.frame_path(state, view, 'labels.i32')), dtype='<i4')
        raw_joints = _read_bytes(bundle.frame_path(state, view, 'joint.f32'))
        if depth.size != h * w or labels.size != h * w or len(raw_joints) != h * w * JOINT_CHANNELS * 4:
            raise StorageError("frame size does not match bundle resolution",
                               details={'path': str(bundle.frame_path(state, view, 'depth.f32'))})
        frame = RenderedFrame(
            rgb=load_png(bundle.frame_path(state, view, 'rgb.png')),
            depth=depth.reshape(h, w),
            labels=PartLabelMap(labels.reshape(h, w)),
            cam=bundle.cameras[view],
            state=bundle.states[state],
        )
        return FrameRecord(frame, JointMap.from_bytes(raw_joints, h, w))

    def list_bundles(self, root: PathLike) -> List[Path]:
        manifest = self.read_manifest(root)
        return [Path(root) / entry['id'] for entry in manifest.get('objects', [])]

    # Gaussian sets

    def save_gaussian_set(self, out_dir: PathLike, gaussians: GaussianSet,
                          joints: List[PartJoint]) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        header = GAUSSIAN_MAGIC + struct.pack('<II', GAUSSIAN_VERSION, len(gaussians))
        body = gaussians.to_matrix().astype('<f4').tobytes()
        _write_bytes(out_dir / 'gaussians.bin', header + body)

        records = np.zeros(len(gaussians), dtype=JOINT_RECORD)
        records['joint'] = gaussians.joint_params
        records['label'] = gaussians.labels
        _write_bytes(out_dir / 'gaussians.joints.bin', records.tobytes())
        _write_json(out_dir / 'parts.json', {'version': GAUSSIAN_VERSION,
                                             'parts': [j.to_dict() for j in joints]})
        logger.info(f"Saved {len(gaussians)} Gaussians and {len(joints)} parts to {out_dir}")
        return out_dir

    def load_gaussian_set(self, in_dir: PathLike) -> Tuple[GaussianSet, List[PartJoint]]:
        in_dir = Path(in_dir)
        raw = _read_bytes(in_dir / 'gaussians.bin')
        if raw[:4] != GAUSSIAN_MAGIC or len(raw) < 12:
            raise StorageError("not a Gaussian set file", details={'path': str(in_dir / 'gaussians.bin')})
        version, count = struct.unpack('<II', raw[4:12])
        if version != GAUSSIAN_VERSION:
            raise StorageError(f"unsupported Gaussian set version {version}",
                               details={'path': str(in_dir / 'gaussians.bin')})
        body = np.frombuffer(raw[12:], dtype='<f4')
        if body.size != count * GAUSSIAN_PARAM_COUNT:
            raise StorageError("truncated Gaussian set", details={'path': str(in_dir / 'gaussians.bin')})
        records = np.frombuffer(_read_bytes(in_dir / 'gaussians.joints.bin'), dtype=JOINT_RECORD)
        if len(records) != count:
            raise StorageError("joint sidecar does not match Gaussian count",
                               details={'path': str(in_dir / 'gaussians.joints.bin')})
        matrix = body.reshape(count, GAUSSIAN_PARAM_COUNT).astype(np.float64)
        matrix[:, 6:10] /= np.maximum(np.linalg.norm(matrix[:, 6:10], axis=1, keepdims=True), 1e-12)
        gaussians = GaussianSet.from_matrix(matrix, records['joint'].astype(np.float64), records['label'])
        parts = _read_json(in_dir / 'parts.json')
        return gaussians, [PartJoint.from_dict(p) for p in parts.get('parts', [])]

    # Checkpoints

    def save_checkpoint(self, path: PathLike, state_dict: Dict[str, torch.Tensor],
                        model_config: Dict[str, Any], stage: int, step: int,
                        extra: Optional[Dict[str, Any]] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = sorted(state_dict)
        header = {
            'model_config': model_config,
            'stage': stage,
            'step': step,
            'params': [{'name': n, 'shape': list(state_dict[n].shape)} for n in names],
            'extra': extra or {},
        }
        header_raw = json.dumps(header, sort_keys=True).encode('utf-8')
        blobs = b''.join(state_dict[n].detach().cpu().to(torch.float32).numpy().astype('<f4').tobytes()
                         for n in names)
        _write_bytes(path, CHECKPOINT_MAGIC + struct.pack('<II', CHECKPOINT_VERSION, len(header_raw))
                     + header_raw + blobs)
        logger.info(f"Saved checkpoint {path} (stage {stage}, step {step})")
        return path

    def load_checkpoint(self, path: PathLike) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
        path = Path(path)
        raw = _read_bytes(path)
        if raw[:4] != CHECKPOINT_MAGIC:
            raise StorageError("not an artikin checkpoint", details={'path': str(path)})
        version, header_len = struct.unpack('<II', raw[4:12])
        if version != CHECKPOINT_VERSION:
            raise StorageError(f"unsupported checkpoint version {version}", details={'path': str(path)})
        header = json.loads(raw[12:12 + header_len].decode('utf-8'))
        offset = 12 + header_len
        state: Dict[str, torch.Tensor] = {}
        for param in header['params']:
            count = int(np.prod(param['shape'])) if param['shape'] else 1
            end = offset + 4 * count
            if end > len(raw):
                raise StorageError("truncated checkpoint", details={'path': str(path), 'param': param['name']})
            values = np.frombuffer(raw[offset:end], dtype='<f4').reshape(param['shape'])
            state[param['name']] = torch.from_numpy(values.copy())
            offset = end
        return state, header
