"""
On-the-fly training: every iteration draws a case, a gravity variant and a
keypoint sample, interpolates phi_init and takes one Adam step.
"""
from dataclasses import dataclass, field
import logging
import time
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import torch

from fields.grid import RIGID_CODES, DisplacementField, LabelVolume, Volume
from formats.documents import Manifest
from interpolators.base_interpolator import get_interpolator
from keypoints.detector import DETECTOR_CONFIG, detect_keypoints
from keypoints.sampling import draw_keypoints
from refiner.augmentation import augment
from refiner.losses import refiner_loss
from refiner.model import RefinerModel, pad_case, pad_field
from simulation.dataset import CaseData, load_case
from utils.errors import DegenerateConfigurationError, InsufficientDataError, TrainingError, ValidationError
from utils.helpers import SeedHelper

logger = logging.getLogger(__name__)

TRAIN_STREAM = 10
VALIDATION_STREAM = 11

EpochCallback = Callable[[int, float, Optional[float], float], None]


@dataclass(frozen=True, eq=False)
class TrainingSample:
    """Padded network inputs and target for one iteration"""
    image: Volume
    labels: LabelVolume
    phi_init: DisplacementField
    phi_gt: DisplacementField


@dataclass
class TrainingHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[Optional[float]] = field(default_factory=list)
    epoch_seconds: List[float] = field(default_factory=list)
    skipped: int = 0

    def to_dict(self) -> Dict[str, object]:
        return {
            'train_loss': list(self.train_loss),
            'val_loss': list(self.val_loss),
            'skipped_iterations': self.skipped,
        }


def tensor_field(field: DisplacementField, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(field.vectors, -1, 0))).to(dtype)[None]


class RefinerTrainer:
    def __init__(self, model: RefinerModel, method: str = 'tps', lambda_tps: float = 0.1,
                 m_keypoints: int = 20, zero_codes: Iterable[int] = RIGID_CODES,
                 contrast_fraction: float = DETECTOR_CONFIG['contrast_fraction']):
        self.model = model
        self.config = model.config
        self.method = method
        self.lambda_tps = lambda_tps
        self.m_keypoints = m_keypoints
        self.zero_codes = tuple(zero_codes)
        self.contrast_fraction = contrast_fraction
        self.optimizer: Optional[torch.optim.Optimizer] = None
        self._candidates: Dict[str, np.ndarray] = {}
        get_interpolator(method, lambda_tps)  # fail fast on unknown method

    def make_optimizer(self) -> torch.optim.Optimizer:
        self.optimizer = torch.optim.Adam(self.model.network.parameters(), lr=self.config.lr,
                                          betas=self.config.betas, eps=self.config.adam_eps)
        return self.optimizer

    def candidates(self, case: CaseData) -> np.ndarray:
        """Cached keypoint candidates of a case's preoperative image"""
        key = case.case.case_id
        if key not in self._candidates:
            self._candidates[key] = detect_keypoints(
                case.image, case.labels.brain_mask(),
                self.contrast_fraction * case.image.intensity_range)
        return self._candidates[key]

    def draw_m(self, rng: np.random.Generator) -> int:
        if self.config.randomize_m:
            low, high = self.config.m_range
            return int(rng.integers(low, high + 1))
        return self.m_keypoints

    def make_sample(self, case: CaseData, variant: int, m: int, rng: np.random.Generator,
                    augment_image: bool = False) -> TrainingSample:
        phi_gt = case.fields[variant]
        keypoints = draw_keypoints(self.candidates(case), phi_gt, m, rng)
        interpolator = get_interpolator(self.method, self.lambda_tps)
        phi_init = interpolator.interpolate(keypoints, case.labels, self.zero_codes)
        image = augment(case.image, rng, self.config.augment_probability) if augment_image else case.image
        image, labels, pad = pad_case(image, case.labels, self.config.multiple)
        return TrainingSample(image, labels, pad_field(phi_init, pad), pad_field(phi_gt, pad))

    def sample_loss(self, sample: TrainingSample) -> torch.Tensor:
        inputs, phi = self.model.prepare_input(sample.image, sample.phi_init, sample.labels.brain_mask())
        pred = self.model.predict(inputs, phi)
        target = tensor_field(sample.phi_gt, self.model.dtype)
        healthy = torch.from_numpy(sample.labels.healthy_mask())
        return refiner_loss(pred, target, healthy, self.config.lambda_reg, sample.image.grid.spacing)

    def step(self, sample: TrainingSample) -> float:
        """One Adam step on one sample; returns the pre-step loss"""
        optimizer = self.optimizer or self.make_optimizer()
        optimizer.zero_grad()
        value = self.sample_loss(sample)
        if not torch.isfinite(value):
            raise TrainingError(f"non-finite training loss {value.item()}")
        value.backward()
        optimizer.step()
        return float(value.item())

    def validation_samples(self, cases: List[CaseData]) -> List[TrainingSample]:
        """Fixed draws: first gravity variant, configured M, no augmentation"""
        samples = []
        for case in cases:
            rng = SeedHelper.case_rng(self.config.seed, case.case.index, VALIDATION_STREAM)
            try:
                samples.append(self.make_sample(case, 0, self.m_keypoints, rng))
            except (DegenerateConfigurationError, InsufficientDataError) as e:
                logger.warning(f"Skipping validation case {case.case.case_id}: {e}")
        return samples

    def validation_loss(self, samples: List[TrainingSample]) -> Optional[float]:
        if not samples:
            return None
        with torch.no_grad():
            return float(np.mean([self.sample_loss(s).item() for s in samples]))

    def _check_parameters(self, epoch: int):
        for name, param in self.model.network.named_parameters():
            if not torch.all(torch.isfinite(param)):
                raise TrainingError(f"parameter {name} became non-finite in epoch {epoch}")

    def fit(self, train_cases: List[CaseData], val_cases: Optional[List[CaseData]] = None,
            epochs: Optional[int] = None, on_epoch: Optional[EpochCallback] = None) -> Tuple[RefinerModel, TrainingHistory]:
        if not train_cases:
            raise ValidationError("training needs at least one case")
        epochs = self.config.epochs if epochs is None else epochs
        torch.manual_seed(self.config.seed)
        torch.use_deterministic_algorithms(True, warn_only=True)
        rng = np.random.default_rng(SeedHelper.child_seed(self.config.seed, TRAIN_STREAM))
        self.make_optimizer()
        val_samples = self.validation_samples(val_cases or [])
        history = TrainingHistory()

        for epoch in range(1, epochs + 1):
            start = time.perf_counter()
            losses = []
            for index in rng.permutation(len(train_cases)):
                case = train_cases[index]
                variant = int(rng.integers(len(case.fields)))
                try:
                    sample = self.make_sample(case, variant, self.draw_m(rng), rng,
                                              augment_image=self.config.augment)
                except (DegenerateConfigurationError, InsufficientDataError) as e:
                    history.skipped += 1
                    logger.warning(f"Skipping {case.case.case_id} variant {variant}: {e}")
                    continue
                losses.append(self.step(sample))
            if not losses:
                raise TrainingError(f"epoch {epoch} produced no usable training samples")
            self._check_parameters(epoch)

            train_loss = float(np.mean(losses))
            val_loss = self.validation_loss(val_samples)
            seconds = time.perf_counter() - start
            history.train_loss.append(train_loss)
            history.val_loss.append(val_loss)
            history.epoch_seconds.append(seconds)
            self.model.epoch = epoch
            logger.debug(f"epoch {epoch}: train {train_loss:.6f} val {val_loss}")
            if on_epoch is not None:
                on_epoch(epoch, train_loss, val_loss, seconds)
        return self.model, history

    def train(self, manifest: Manifest, epochs: Optional[int] = None,
              on_epoch: Optional[EpochCallback] = None) -> Tuple[RefinerModel, TrainingHistory]:
        """Fit on the manifest's train split, validating on its val split"""
        train_cases = [load_case(manifest, c) for c in manifest.cases_in('train')]
        if not train_cases:
            raise ValidationError("manifest has no training cases")
        val_cases = [load_case(manifest, c) for c in manifest.cases_in('val')]
        logger.info(f"Training refiner on {len(train_cases)} cases ({len(val_cases)} validation), "
                    f"{self.model.parameter_count()} parameters")
        return self.fit(train_cases, val_cases, epochs, on_epoch)
