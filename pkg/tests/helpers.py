"""Shared test helpers."""

from ads import imaging
from ads.synthscene import SceneConfig, SceneDescriptor, oracle_correspondences, render


def render_pair(src: SceneDescriptor, tar: SceneDescriptor, size: int = 64, cfg: SceneConfig = SceneConfig()):
    """Render a pair as 8-bit quantised images plus oracle correspondences."""
    s_img, s_mask, _ = render(src, size, size, cfg)
    t_img, _, _ = render(tar, size, size, cfg)
    return imaging.quantize(s_img), imaging.quantize(t_img), s_mask, oracle_correspondences(src, tar, cfg)
