"""
Tests for SVG overlays

Covers:
- Document size and viewBox
- Ground-truth polyline at pixel centres
- One square per predicted skeleton pixel
- Run-length encoded background
"""
import xml.etree.ElementTree as ET

import numpy as np

# Import from src
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.utils.svg_overlay import GT_COLOR, PRED_COLOR, render_overlay, write_overlay

SVG_NS = "{http://www.w3.org/2000/svg}"


class TestRenderOverlay:
    """render_overlay"""

    def test_parses_with_frame_size(self):
        """Test the document is valid XML sized to the frame"""
        root = ET.fromstring(render_overlay(np.zeros((6, 9)), np.zeros((0, 2)), np.zeros((0, 2))))

        assert root.tag == f"{SVG_NS}svg"
        assert root.get("width") == "9"
        assert root.get("height") == "6"
        assert root.get("viewBox") == "0 0 9 6"

    def test_contour_at_pixel_centres(self):
        """Test polyline points are offset by half a pixel"""
        svg = render_overlay(np.zeros((4, 4)), np.array([[0.0, 1.0], [2.0, 3.0]]), np.zeros((0, 2)))

        polyline = ET.fromstring(svg).find(f"{SVG_NS}polyline")
        assert polyline.get("points") == "0.50,1.50 2.50,3.50"
        assert polyline.get("stroke") == GT_COLOR

    def test_one_square_per_prediction(self):
        """Test each skeleton pixel becomes one red square"""
        svg = render_overlay(np.zeros((4, 4)), np.zeros((0, 2)), np.array([[1.0, 2.0], [3.0, 0.0]]))

        preds = [r for r in ET.fromstring(svg).iter(f"{SVG_NS}rect") if r.get("fill") == PRED_COLOR]
        assert [(r.get("x"), r.get("y")) for r in preds] == [("1", "2"), ("3", "0")]

    def test_background_runs(self):
        """Test a uniform bright row collapses into one rectangle and black rows into none"""
        img = np.zeros((3, 5))
        img[1] = 1.0

        rects = [r for r in ET.fromstring(render_overlay(img, np.zeros((0, 2)), np.zeros((0, 2)))).iter(f"{SVG_NS}rect")]

        gray = [r for r in rects if r.get("fill", "").startswith("rgb")]
        assert len(gray) == 1
        assert gray[0].get("width") == "5"
        assert gray[0].get("fill") == "rgb(255,255,255)"

    def test_title(self):
        """Test an optional caption is included"""
        svg = render_overlay(np.zeros((2, 2)), np.zeros((0, 2)), np.zeros((0, 2)), title="frame 3")

        assert "<title>frame 3</title>" in svg

    def test_write(self, tmp_path):
        """Test write_overlay stores the rendered text"""
        path = tmp_path / "o.svg"
        img = np.full((2, 2), 0.5)

        write_overlay(path, img, np.zeros((0, 2)), np.zeros((0, 2)))

        assert path.read_text() == render_overlay(img, np.zeros((0, 2)), np.zeros((0, 2)))
