"""Model backends for the three deployment profiles.

`toy` wraps the deterministic synthetic provider from the pipeline package,
so wire-level integration tests run with no model weights. `general` loads a
stock CLIP image/text encoder plus SAM; `industrial` additionally applies a
domain-adapter checkpoint to the image/text embeddings. The real profiles
require torch-based extras and raise BackendUnavailable when those are not
installed or no checkpoint is configured.
"""

from __future__ import annotations

import numpy as np


class BackendUnavailable(RuntimeError):
    """The requested profile cannot be served in this environment."""


class ToyBackend:
    """Deterministic color-histogram semantics; no weights needed."""

    profile = "toy"

    def __init__(self, dim: int = 32):
        from ovseg.feature import SyntheticProvider

        self._provider = SyntheticProvider(dim)
        self.dim = dim

    def embed_image(self, rgb: np.ndarray) -> np.ndarray:
        return self._provider.embed_image(rgb)

    def embed_text(self, text: str) -> np.ndarray:
        return self._provider.embed_text(text)

    def segment(self, rgb: np.ndarray, points: np.ndarray) -> np.ndarray:
        return self._provider.segment(rgb, points)

    def describe(self) -> dict:
        return {
            "dim": self.dim,
            "image_model": f"toy-histogram-{self.dim}",
            "text_model": f"toy-histogram-{self.dim}",
            "segmenter": "toy-floodfill",
            "profile": self.profile,
        }


class ClipSamBackend:
    """Stock CLIP + SAM; `industrial` adds adapter weights on top.

    Heavy imports happen lazily in __init__ so the service can report a
    clean error when the extras are missing.
    """

    def __init__(
        self,
        profile: str,
        clip_model: str = "ViT-B-32",
        clip_pretrained: str = "openai",
        adapter_checkpoint: str | None = None,
        sam_checkpoint: str | None = None,
        device: str = "cpu",
    ):
        self.profile = profile
        try:
            import torch  # noqa: F401
            import open_clip
        except ImportError as exc:
            raise BackendUnavailable(
                f"profile '{profile}' needs torch and open_clip_torch installed "
                f"(pip install 'ovseg-model-service[real]'): {exc}"
            ) from exc
        import torch

        self._torch = torch
        self.device = device
        self.model, _, self.preprocess = open_clip.create_model_and_transforms(
            clip_model, pretrained=clip_pretrained, device=device
        )
        self.model.eval()
        self.tokenizer = open_clip.get_tokenizer(clip_model)
        self.dim = int(self.model.text_projection.shape[1])
        self.clip_model = clip_model

        self.adapter = None
        if profile == "industrial":
            if not adapter_checkpoint:
                raise BackendUnavailable(
                    "profile 'industrial' needs --adapter-checkpoint pointing to "
                    "domain-adapted weights; none configured"
                )
            self.adapter = torch.load(adapter_checkpoint, map_location=device)

        self._sam_predictor = None
        if sam_checkpoint:
            try:
                from segment_anything import SamPredictor, sam_model_registry
            except ImportError as exc:
                raise BackendUnavailable(
                    f"--sam-checkpoint given but segment-anything is not installed: {exc}"
                ) from exc
            sam = sam_model_registry["vit_b"](checkpoint=sam_checkpoint).to(device)
            self._sam_predictor = SamPredictor(sam)

    def _apply_adapter(self, vec):
        if self.adapter is None:
            return vec
        # Residual adapter: out = normalize(vec + W @ vec), the common
        # parameter-efficient fine-tuning shape for embedding adaptation.
        torch = self._torch
        w = self.adapter["image_adapter"] if vec.ndim == 1 else self.adapter["image_adapter"]
        return vec + torch.nn.functional.linear(vec, w)

    def embed_image(self, rgb: np.ndarray) -> np.ndarray:
        from PIL import Image

        torch = self._torch
        with torch.no_grad():
            tensor = self.preprocess(Image.fromarray(rgb)).unsqueeze(0).to(self.device)
            vec = self.model.encode_image(tensor)[0]
            vec = self._apply_adapter(vec)
            vec = vec / vec.norm()
        return vec.cpu().numpy().astype(np.float64)

    def embed_text(self, text: str) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            tokens = self.tokenizer([text]).to(self.device)
            vec = self.model.encode_text(tokens)[0]
            vec = vec / vec.norm()
        return vec.cpu().numpy().astype(np.float64)

    def segment(self, rgb: np.ndarray, points: np.ndarray) -> np.ndarray:
        if self._sam_predictor is None:
            raise BackendUnavailable(
                "segmentation needs --sam-checkpoint; none configured"
            )
        self._sam_predictor.set_image(rgb)
        masks, scores, _ = self._sam_predictor.predict(
            point_coords=np.asarray(points, dtype=np.float32),
            point_labels=np.ones(len(points), dtype=np.int32),
            multimask_output=True,
        )
        return masks[int(np.argmax(scores))].astype(bool)

    def describe(self) -> dict:
        return {
            "dim": self.dim,
            "image_model": f"{self.clip_model}{'+adapter' if self.adapter else ''}",
            "text_model": self.clip_model,
            "segmenter": "sam-vit-b" if self._sam_predictor else "none",
            "profile": self.profile,
        }


def make_backend(profile: str, **kwargs):
    if profile == "toy":
        return ToyBackend(dim=kwargs.get("dim", 32))
    if profile in ("general", "industrial"):
        return ClipSamBackend(profile=profile, **{k: v for k, v in kwargs.items() if k != "dim"})
    raise ValueError(f"unknown profile: {profile}")
