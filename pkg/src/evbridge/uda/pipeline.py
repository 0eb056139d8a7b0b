"""Training and evaluation of the image -> event task transfer on toy scenes."""
from __future__ import annotations

import logging
import math
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..config import PipelineConfig
from ..errors import EvBridgeError
from ..formats import append_jsonl, dump_json, write_checkpoint
from ..losses import (AUGM_WEIGHT, DISC_STEP, GEN_STEP, GEN_TERMS, LossReport, ScheduleState,
                      compose_losses, schedule_next)
from . import objectives as obj
from .networks import Networks, log_gradients
from .scenes import EventTestSet, ToyDataset

log = logging.getLogger(__name__)


class TrainingError(EvBridgeError):
    """A loss term became non-finite; ``term`` names it and ``values`` holds all terms."""

    def __init__(self, term: str, values: dict, step: int):
        self.term, self.values, self.step = term, values, step
        super().__init__(f"non-finite loss term {term!r} at step {step}: {values}")


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray
    events: np.ndarray
    log_grad: np.ndarray
    grad_mag: np.ndarray
    noise: list
    directions: np.ndarray


@dataclass
class TrainResult:
    nets: Networks
    reports: list = field(default_factory=list)
    schedule: ScheduleState | None = None
    accuracy: float | None = None


class Trainer:
    """Owns the networks, the batch RNG and the D,D,G schedule for one run."""

    def __init__(self, cfg: PipelineConfig, data: ToyDataset, nets: Networks | None = None):
        self.cfg = cfg
        self.data = data
        self.nets = nets if nets is not None else Networks(cfg)
        self.schedule = ScheduleState()
        self.rng = np.random.default_rng([int(cfg.seed), 0xBA7C])
        self.step_index = 0
        self._dir_sampler_rng = np.random.default_rng([int(cfg.sampler_spec().seed), int(cfg.seed), 0xA06])
        self.gen_names = self._gen_names()
        self.disc_names = self.nets.names("disc_lat", "disc_event") if cfg.adaptation_enabled else []

    def _gen_names(self) -> list[str]:
        groups = ["enc_img", "task"]
        if self.cfg.adaptation_enabled:
            groups += ["enc_event", "dec_flow", "refine"]
            if self.cfg.split_enabled:
                groups.append("enc_attr")
        return self.nets.names(*groups)

    # -- data ---------------------------------------------------------------

    def sample_batch(self) -> Batch:
        cfg, d, rng = self.cfg, self.data, self.rng
        b = cfg.batch_size
        # images and events are indexed independently: no scene pairing
        ii = rng.integers(0, len(d.images), size=b)
        ei = rng.integers(0, len(d.events), size=b)
        images = d.images[ii]
        r = cfg.resolution
        noise = [rng.normal(size=(b, cfg.noise_channels, r, r)) for _ in range(3)]
        theta = self._dir_sampler_rng.uniform(0.0, 2.0 * np.pi, size=b)
        return Batch(images=images, labels=d.labels[ii], events=d.events[ei],
                     log_grad=log_gradients(images, cfg.log_eps),
                     grad_mag=obj.batch_gradient_magnitude(images), noise=noise,
                     directions=np.stack([np.cos(theta), np.sin(theta)], axis=1))

    # -- objectives -----------------------------------------------------------

    def forward(self, batch: Batch, gen_grad: bool = True):
        """All loss terms for one batch as scalar tensors, plus intermediates.

        With ``gen_grad`` false the generator side runs without recording, so
        only the discriminator terms can be differentiated.
        """
        cfg, nets = self.cfg, self.nets
        k = cfg.event_input_scale
        zero = ad.Tensor(0.0)
        terms = {name: zero for name in ("lat_gen", "recons_gen", "cycle", "augm", "grad_coverage",
                                         "smooth", "task", "lat_disc", "recons_disc")}
        aux: dict = {}
        with (nullcontext() if gen_grad else ad.no_grad()):
            z_img = nets.encode_image(batch.images)
            aux["z_img"] = z_img
            task = ad.softmax_cross_entropy(nets.task(z_img), batch.labels)
            if not cfg.adaptation_enabled:
                terms["task"] = task
                return terms, aux
            real_in = batch.events * k
            z_ev, zeta_ev = nets.encode_event(real_in)
            zeta = zeta_ev if cfg.split_enabled else None
            # by default only the event encoder is pulled toward the image features
            z_src = z_img if cfg.align_image_features else ad.detach(z_img)
            terms["lat_gen"] = obj.hinge_gen_latent(nets.disc_lat(z_src), nets.disc_lat(z_ev))

            fake, pflow = nets.translate(batch.images, z_img, zeta, batch.noise[0], batch.log_grad)
            fake_in = fake * k
            aux.update(fake=fake, pflow=pflow)
            terms["recons_gen"] = obj.hinge_gen_recons(nets.disc_event(fake_in), cfg.standard_sign)

            z_fake = nets.enc_event(fake_in)
            z_target = ad.detach(z_img) if cfg.detach_cycle_targets else z_img
            cycle = obj.l1(z_target, z_fake)
            if cfg.split_enabled:
                zeta_fake = nets.enc_attr(fake_in)
                zeta_target = ad.detach(zeta) if cfg.detach_cycle_targets else zeta
                cycle = cycle + obj.l1(zeta_target, zeta_fake)
            terms["cycle"] = cycle
            task = task + ad.softmax_cross_entropy(nets.task(z_fake), batch.labels)
            terms["grad_coverage"] = obj.gradient_coverage(fake, batch.grad_mag, cfg.per_pixel_losses)
            if pflow is not None:
                # same value either way; the detached pass keeps this term from flattening z
                sflow = pflow if cfg.smooth_through_encoder else nets.decode_pseudo_flow(ad.detach(z_img), zeta)
                terms["smooth"] = obj.charbonnier_smoothness(sflow, componentwise=cfg.smooth_componentwise,
                                                             per_pixel=cfg.per_pixel_losses)

            if cfg.augmentation_active:
                aug_flow = obj.augment_flow(pflow, batch.directions)
                y_aug = nets.refine_counts(nets.initial_guess(batch.log_grad, aug_flow), batch.noise[1])
                y_aug_in = y_aug * k
                zeta_aug = nets.enc_attr(y_aug_in)
                # content is held fixed: only zeta_aug may carry the augmented motion
                z_ref = ad.detach(z_img)
                y_rec, _ = nets.translate(batch.images, z_ref, zeta_aug, batch.noise[2], batch.log_grad)
                zeta_rec = nets.enc_attr(y_rec * k)
                terms["augm"] = obj.l1(zeta_aug, zeta_rec)
                aux.update(z_ref=z_ref, y_aug=y_aug, zeta_aug=zeta_aug, zeta_rec=zeta_rec)
                if cfg.task_on_augmented:
                    task = task + ad.softmax_cross_entropy(nets.task(nets.enc_event(y_aug_in)), batch.labels)
            terms["task"] = task

        terms["lat_disc"] = obj.hinge_disc(nets.disc_lat(ad.detach(z_img)), nets.disc_lat(ad.detach(z_ev)))
        terms["recons_disc"] = obj.recons_disc(nets.disc_event(ad.detach(fake_in)), nets.disc_event(real_in),
                                               cfg.standard_sign)
        return terms, aux

    @staticmethod
    def composite(terms: dict, kind: str):
        if kind == DISC_STEP:
            return terms["lat_disc"] + terms["recons_disc"]
        total = None
        for name in GEN_TERMS:
            t = terms[name] * AUGM_WEIGHT if name == "augm" else terms[name]
            total = t if total is None else total + t
        return total

    def _report(self, terms: dict) -> LossReport:
        values = {k: float(v.item()) for k, v in terms.items()}
        for k, v in values.items():
            if not math.isfinite(v):
                raise TrainingError(k, values, self.step_index)
        return compose_losses(values)

    # -- updates ----------------------------------------------------------------

    def step(self) -> tuple[str, LossReport]:
        kind = schedule_next(self.schedule)
        batch = self.sample_batch()
        store = self.nets.store
        store.zero_grad()
        names = self.gen_names if kind == GEN_STEP else self.disc_names
        with ad.Tape() as tape:
            terms, _ = self.forward(batch, gen_grad=(kind == GEN_STEP))
            report = self._report(terms)
            if names:
                tape.backward(self.composite(terms, kind), store)
        if names:
            cfg = self.cfg
            ad.adam_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, names=names)
        self.step_index += 1
        return kind, report


def evaluate(nets: Networks, test_set: EventTestSet, batch: int = 100) -> float:
    """Task-head accuracy on encoded event histograms."""
    correct = 0
    for i in range(0, len(test_set.labels), batch):
        logits = nets.classify_events(test_set.events[i:i + batch])
        correct += int(np.sum(np.argmax(logits, axis=1) == test_set.labels[i:i + batch]))
    return correct / len(test_set.labels)


def train(cfg: PipelineConfig, data: ToyDataset, test_set: EventTestSet | None = None,
          out_dir=None, log_every: int = 0) -> TrainResult:
    """Run ``cfg.steps`` scheduled updates; optionally write checkpoint, log and metrics."""
    trainer = Trainer(cfg, data)
    out = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "losses.jsonl"
        log_path.write_text("")
    result = TrainResult(trainer.nets, schedule=trainer.schedule)
    for i in range(cfg.steps):
        kind, report = trainer.step()
        result.reports.append(report)
        if log_path is not None:
            append_jsonl(log_path, {"step": i, "kind": kind, **report.to_dict()})
        if log_every and (i + 1) % log_every == 0:
            log.info("step %d %s gen=%.4f disc=%.4f task=%.4f", i + 1, kind, report.composite_gen,
                     report.composite_disc, report.task)
    if test_set is not None:
        result.accuracy = evaluate(trainer.nets, test_set)
    if out is not None:
        write_checkpoint(out / "model.evbr", trainer.nets.store.arrays())
        metrics = {"accuracy": result.accuracy, "steps": cfg.steps,
                   "disc_steps": trainer.schedule.disc_steps_taken,
                   "gen_steps": trainer.schedule.gen_steps_taken, **cfg.ablation_flags()}
        dump_json(out / "metrics.json", metrics)
    return result
