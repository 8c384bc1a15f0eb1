"""Generation and filter engines.

Real engines import their model stacks lazily so the package installs
and serves conformance traffic without GPU dependencies. Stub engines
are deterministic stand-ins used by the conformance suite and smoke
tests: the generation stub writes a real (single-pixel) PNG so
generated_ref always points at an actual file, and the filter stub
answers strictly in the binary format.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import DEVICE_ENV_VAR


class StartupError(Exception):
    """A model stack could not be loaded at server startup."""


# Smallest valid 1x1 gray PNG; enough for refs to point at real bytes.
_STUB_PNG = bytes.fromhex(
    "89504e470d0a1a0a0000000d49484452000000010000000108000000003a7e9b55"
    "0000000a49444154789c63680000008200812cd6ae740000000049454e44ae426082"
)


@dataclass
class AdapterConfig:
    """Server-side knobs; capabilities derived from these are advertised
    in the hello handshake so clients can reject incompatible backends."""

    engine: str = "stub"  # stub | diffusion (generation) / stub | vlm (filter)
    model_id: str = "runwayml/stable-diffusion-v1-5"
    controller_id: str = "lllyasviel/sd-controlnet-hed"
    vlm_id: str = "Qwen/Qwen2.5-VL-7B-Instruct"
    device: str = field(
        default_factory=lambda: os.environ.get(DEVICE_ENV_VAR, "cuda")
    )
    inference_steps: int = 30
    max_batch: int = 1
    output_dir: Path = Path("generated")
    seed_deterministic: bool = True

    def capabilities(self, kind: str) -> dict:
        return {
            "backend": f"adapter-{self.engine}",
            "kinds": kind,
            "deterministic": "true" if self.deterministic() else "false",
            "inference_steps_default": str(self.inference_steps),
            "max_batch": str(self.max_batch),
        }

    def deterministic(self) -> bool:
        # Stubs are pure functions of the request; model stacks are
        # seed-deterministic only when the backend math is (advertised,
        # not assumed).
        return self.engine == "stub" or self.seed_deterministic


class StubGenerationEngine:
    """Writes a placeholder image per request, named by job id."""

    def __init__(self, config: AdapterConfig):
        self.config = config
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)

    def generate(self, request: dict) -> str:
        digest = hashlib.blake2b(
            f"{request['job_id']}|{request['seed']}|{request['prompt']}".encode(),
            digest_size=6,
        ).hexdigest()
        rel = f"{request['job_id']}-{digest}.png"
        (Path(self.config.output_dir) / rel).write_bytes(_STUB_PNG)
        return rel


class StubVqaEngine:
    """Answers every question affirmatively, strictly in format."""

    def __init__(self, config: AdapterConfig):
        self.config = config

    def answer(self, request: dict) -> str:
        return " ".join("1" for _ in request["questions"])


class DiffusionGenerationEngine:
    """Latent-diffusion img2img with a structure controller on soft-edge
    maps. Heavy imports happen here, at startup, never at module import."""

    def __init__(self, config: AdapterConfig):
        self.config = config
        try:
            import torch
            from controlnet_aux import HEDdetector
            from diffusers import (
                ControlNetModel,
                StableDiffusionControlNetImg2ImgPipeline,
            )
            from PIL import Image
        except ImportError as exc:
            raise StartupError(f"diffusion stack unavailable: {exc}") from exc
        self._torch = torch
        self._Image = Image
        try:
            controlnet = ControlNetModel.from_pretrained(config.controller_id)
            self._pipe = StableDiffusionControlNetImg2ImgPipeline.from_pretrained(
                config.model_id, controlnet=controlnet
            ).to(config.device)
            self._edges = HEDdetector.from_pretrained("lllyasviel/Annotators")
        except Exception as exc:  # model fetch/load failures of any kind
            raise StartupError(f"could not load generation models: {exc}") from exc
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)

    def generate(self, request: dict) -> str:
        source = self._Image.open(request["source_ref"]).convert("RGB")
        control = self._edges(source)  # soft edge map preserves structure
        generator = self._torch.Generator(device=self.config.device).manual_seed(
            int(request["seed"])
        )
        result = self._pipe(
            prompt=f"{request['prompt']}, {request['positive_prompt']}",
            negative_prompt=request["negative_prompt"],
            image=source,
            control_image=control,
            num_inference_steps=int(request["inference_steps"]),
            generator=generator,
        ).images[0]
        rel = f"{request['job_id']}.png"
        result.save(Path(self.config.output_dir) / rel)
        return rel


class VlmFilterEngine:
    """Vision-language QA over generated images; the instruction pins the
    binary answer format, and any model refusal is surfaced verbatim so
    the client's strict parser turns it into a needs-review marker."""

    def __init__(self, config: AdapterConfig):
        self.config = config
        try:
            from transformers import AutoModelForVision2Seq, AutoProcessor
        except ImportError as exc:
            raise StartupError(f"vlm stack unavailable: {exc}") from exc
        try:
            self._processor = AutoProcessor.from_pretrained(config.vlm_id)
            self._model = AutoModelForVision2Seq.from_pretrained(config.vlm_id).to(
                config.device
            )
        except Exception as exc:
            raise StartupError(f"could not load filter model: {exc}") from exc

    def answer(self, request: dict) -> str:
        from PIL import Image

        image = Image.open(request["generated_ref"]).convert("RGB")
        prompt = request["instruction"] + "\n" + "\n".join(request["questions"])
        inputs = self._processor(text=prompt, images=image, return_tensors="pt").to(
            self.config.device
        )
        output = self._model.generate(**inputs, max_new_tokens=16)
        return self._processor.batch_decode(output, skip_special_tokens=True)[-1].strip()


def generation_engine(config: AdapterConfig):
    if config.engine == "stub":
        return StubGenerationEngine(config)
    if config.engine == "diffusion":
        return DiffusionGenerationEngine(config)
    raise StartupError(f"unknown generation engine {config.engine!r}")


def filter_engine(config: AdapterConfig):
    if config.engine == "stub":
        return StubVqaEngine(config)
    if config.engine == "vlm":
        return VlmFilterEngine(config)
    raise StartupError(f"unknown filter engine {config.engine!r}")
