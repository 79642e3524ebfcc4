mod common;

use proptest::prelude::*;
use ypose::data::{Pipeline, Record};
use ypose::roi::{refine_image, write_sidecar, BBox, HeuristicSegmenter, Provenance, Raster, RoiAnnotation, RoiSource, Segmenter, REFINED_SIZE};

fn textured(w: usize, h: usize) -> Raster {
    let data = (0..3 * w * h).map(|i| ((i * 37 + i / w * 11) % 256) as f64).collect();
    Raster::new(w, h, data).unwrap()
}

#[test]
fn crop_and_resize_match_an_independent_resampler() {
    let img = textured(640, 480);
    let bbox = BBox { x0: 100, y0: 50, x1: 300, y1: 400 };
    let ann = RoiAnnotation { bbox, mask: None, confidence: 0.9, source: RoiSource::External };
    let refined = refine_image(&img, &ann, false).unwrap();
    assert_eq!(refined.provenance, Provenance::Cropped);
    assert_eq!(refined.pixels.shape(), &[3, 224, 224]);
    // Crop by hand, then resample with the oracle.
    let (cw, ch) = (bbox.width(), bbox.height());
    let mut crop = Vec::with_capacity(3 * cw * ch);
    for c in 0..3 {
        for y in bbox.y0..bbox.y1 {
            for x in bbox.x0..bbox.x1 {
                crop.push(img.data()[c * 640 * 480 + y * 640 + x]);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for c in 0..3 {
        for y in 0..REFINED_SIZE {
            for x in 0..REFINED_SIZE {
                let want = common::bilinear_oracle(&crop, cw, ch, REFINED_SIZE, REFINED_SIZE, c, x, y);
                let got = refined.pixels.data()[c * REFINED_SIZE * REFINED_SIZE + y * REFINED_SIZE + x];
                worst = worst.max((got - want).abs());
            }
        }
    }
    assert!(worst <= 1.0, "max deviation {worst}");
}

#[test]
fn full_frame_box_equals_bypass() {
    let img = textured(90, 70);
    let full = RoiAnnotation { bbox: BBox::full(90, 70), mask: None, confidence: 1.0, source: RoiSource::External };
    let cropped = refine_image(&img, &full, false).unwrap();
    let bypass = refine_image(&img, &full, true).unwrap();
    assert_eq!(bypass.provenance, Provenance::BypassSynthetic);
    assert_eq!(cropped.pixels, bypass.pixels);
}

#[test]
fn uniform_image_falls_back_to_full_frame() {
    let img = Raster::filled(50, 40, [10.0, 200.0, 30.0]);
    let ann = HeuristicSegmenter::default().segment(&img);
    assert_eq!(ann.source, RoiSource::None);
    assert_eq!(refine_image(&img, &ann, false).unwrap().provenance, Provenance::FallbackFull);
}

#[test]
fn largest_of_two_people_is_kept() {
    let mut img = Raster::filled(120, 80, [128.0, 128.0, 128.0]);
    let big = BBox { x0: 10, y0: 10, x1: 50, y1: 70 };
    let small = BBox { x0: 80, y0: 20, x1: 100, y1: 40 };
    for b in [big, small] {
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                img.set_pixel(x, y, [230.0, 20.0, 20.0]);
            }
        }
    }
    let ann = HeuristicSegmenter::default().segment(&img);
    assert!(ann.bbox.iou(&big) >= 0.9, "{:?}", ann.bbox);
}

#[test]
fn sidecar_overrides_the_heuristic_in_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.png");
    textured(64, 48).to_rgb8().save(&path).unwrap();
    let ann = RoiAnnotation { bbox: BBox { x0: 4, y0: 6, x1: 40, y1: 30 }, mask: None, confidence: 0.75, source: RoiSource::External };
    write_sidecar(&path, &ann).unwrap();
    let record = Record { path, labels: [0, 0, 0], synthetic: false };
    let (refined, got) = Pipeline::new(32, true).refine(&record).unwrap();
    assert_eq!(got.bbox, ann.bbox);
    assert_eq!(got.source, RoiSource::External);
    assert_eq!(refined.provenance, Provenance::Cropped);
    let (_, skipped) = Pipeline::new(32, false).refine(&record).unwrap();
    assert_eq!(skipped.source, RoiSource::None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn refined_output_is_always_224_square(w in 2usize..120, h in 2usize..120, fx in 0.0f64..1.0, fy in 0.0f64..1.0, synthetic in any::<bool>()) {
        let img = textured(w, h);
        let x0 = ((w - 1) as f64 * fx) as usize;
        let y0 = ((h - 1) as f64 * fy) as usize;
        let ann = RoiAnnotation { bbox: BBox { x0, y0, x1: w, y1: h }, mask: None, confidence: 0.5, source: RoiSource::External };
        let a = refine_image(&img, &ann, synthetic).unwrap();
        prop_assert_eq!(a.pixels.shape(), &[3, 224, 224]);
        prop_assert_eq!(a.clone(), refine_image(&img, &ann, synthetic).unwrap());
    }
}
