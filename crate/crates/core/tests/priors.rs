//! Prior backends: golden protocol bytes, a mock service, files and the oracle.

mod common;

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsesplat::buffer::{Image, Map};
use sparsesplat::error::Error;
use sparsesplat::io::femb::write_femb;
use sparsesplat::io::pfm::write_pfm;
use sparsesplat::priors::service::{
    decode_depth_response, decode_features_response, encode_depth_response, encode_error_frame,
    encode_features_response, encode_request, HANDSHAKE, MSG_DEPTH, MSG_FEATURES, STATUS_UNKNOWN,
};
use sparsesplat::priors::{CropKey, DepthMap, FeatureEmbedding, PriorSource, PriorView, ServiceClient, ToyExtractor};
use sparsesplat::rasterizer::{render, RenderSettings};
use sparsesplat::scene::Vec3;

fn golden(name: &str) -> Vec<u8> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", "protocol", name].iter().collect();
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn indexed_image(w: usize, h: usize, f: impl FnMut(usize) -> f64) -> Image {
    Image::from_data(w, h, (0..w * h * 3).map(f).collect()).unwrap()
}

#[test]
fn encoders_reproduce_golden_vectors() {
    assert_eq!(HANDSHAKE.as_slice(), golden("handshake.bin"));
    let req = indexed_image(3, 2, |k| k as f64 / 17.0);
    assert_eq!(encode_request(MSG_DEPTH, &req), golden("depth_request_2x3.bin"));
    let req = indexed_image(8, 8, |k| (k % 7) as f64 / 8.0);
    assert_eq!(encode_request(MSG_FEATURES, &req), golden("features_request_8x8.bin"));
    let ramp = Map::from_data(3, 2, (0..6).map(|k| 0.5 + 0.25 * k as f64).collect()).unwrap();
    assert_eq!(encode_depth_response(&ramp), golden("depth_response_2x3.bin"));
    assert_eq!(encode_features_response(&[1.0, -2.5, 0.125, 3.0]), golden("features_response_4.bin"));
    assert_eq!(encode_error_frame(MSG_DEPTH, "model failed"), golden("error_depth.bin"));
    assert_eq!(encode_error_frame(STATUS_UNKNOWN, "unknown message type 9"), golden("error_unknown.bin"));
}

#[test]
fn decoders_read_golden_vectors() {
    let map = decode_depth_response(&mut golden("depth_response_2x3.bin").as_slice(), 3, 2).unwrap();
    assert_eq!(map.data, vec![0.5, 0.75, 1.0, 1.25, 1.5, 1.75]);
    let f = decode_features_response(&mut golden("features_response_4.bin").as_slice()).unwrap();
    assert_eq!(f, vec![1.0, -2.5, 0.125, 3.0]);
    match decode_depth_response(&mut golden("error_depth.bin").as_slice(), 3, 2) {
        Err(Error::Remote(m)) => assert_eq!(m, "model failed"),
        other => panic!("expected a remote error, got {other:?}"),
    }
    match decode_features_response(&mut golden("error_unknown.bin").as_slice()) {
        Err(Error::Remote(m)) => assert_eq!(m, "unknown message type 9"),
        other => panic!("expected a remote error, got {other:?}"),
    }
    assert!(matches!(
        decode_depth_response(&mut golden("depth_response_2x3.bin").as_slice(), 2, 3),
        Err(Error::DimensionMismatch { .. })
    ));
    let mut truncated = golden("depth_response_2x3.bin");
    truncated.truncate(20);
    assert!(decode_depth_response(&mut truncated.as_slice(), 3, 2).is_err());
}

/// Depth value the mock returns at `(x, y)`.
fn ramp(x: usize, y: usize) -> f64 {
    1.0 + 0.5 * x as f64 + 0.25 * y as f64
}

#[derive(Clone, Copy)]
enum Mode {
    Normal,
    /// Features fail with an error frame; depth still works.
    FailFeatures,
    /// Depth responses carry the wrong size.
    WrongSize,
}

fn read_exact_or_eof(s: &mut TcpStream, buf: &mut [u8]) -> bool {
    s.read_exact(buf).is_ok()
}

fn serve_one(mut s: TcpStream, mode: Mode) {
    let mut hs = [0u8; 5];
    if !read_exact_or_eof(&mut s, &mut hs) || &hs != HANDSHAKE {
        return;
    }
    s.write_all(HANDSHAKE).unwrap();
    let toy = ToyExtractor::default();
    loop {
        let mut head = [0u8; 9];
        if !read_exact_or_eof(&mut s, &mut head) {
            return;
        }
        let h = u32::from_le_bytes(head[1..5].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
        let mut px = vec![0u8; w * h * 3 * 4];
        if !read_exact_or_eof(&mut s, &mut px) {
            return;
        }
        let data = px
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let reply = match (head[0], mode) {
            (MSG_DEPTH, Mode::WrongSize) => encode_depth_response(&Map::new(w + 1, h)),
            (MSG_DEPTH, _) => {
                let map = Map::from_data(w, h, (0..w * h).map(|p| ramp(p % w, p / w)).collect()).unwrap();
                encode_depth_response(&map)
            }
            (MSG_FEATURES, Mode::FailFeatures) => encode_error_frame(MSG_FEATURES, "feature model unavailable"),
            (MSG_FEATURES, _) => {
                let patch = Image::from_data(w, h, data).unwrap();
                encode_features_response(&toy.embed(&patch).unwrap().values)
            }
            (other, _) => encode_error_frame(STATUS_UNKNOWN, &format!("unknown message type {other}")),
        };
        s.write_all(&reply).unwrap();
    }
}

/// Starts a mock prior service on an ephemeral port.
fn mock_service(mode: Mode) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(s) = conn else { return };
            thread::spawn(move || serve_one(s, mode));
        }
    });
    addr
}

fn client(addr: &str) -> PriorSource {
    PriorSource::Service(ServiceClient::new(addr, Duration::from_secs(5)))
}

#[test]
fn service_depth_returns_the_mock_ramp() {
    let source = client(&mock_service(Mode::Normal));
    let camera = axis_camera(7, 5, 8.0);
    let image = Image::filled(7, 5, [0.3, 0.4, 0.5]);
    let view = PriorView { camera: &camera, stem: None };
    let d = source.get_depth(&view, Some(&image)).unwrap();
    assert_eq!(d.dims(), (7, 5));
    for y in 0..5 {
        for x in 0..7 {
            assert_eq!(d.map.get(x, y), ramp(x, y));
        }
    }
    assert!(d.valid.iter().all(|&v| v));
    // a second request reuses the connection
    assert_eq!(source.get_depth(&view, Some(&image)).unwrap(), d);
    assert!(matches!(source.get_depth(&view, None), Err(Error::MissingPrior(_))));
}

#[test]
fn service_features_match_the_toy_extractor() {
    let source = client(&mock_service(Mode::Normal));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let patch = indexed_image(12, 10, |_| rng.random_range(0.0..1.0));
    let remote = source.get_features(&patch, None).unwrap();
    let local = ToyExtractor::default().embed(&patch).unwrap();
    assert_eq!(remote.dim(), local.dim());
    for (a, b) in remote.values.iter().zip(&local.values) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn error_frames_surface_verbatim_and_keep_the_connection() {
    let source = client(&mock_service(Mode::FailFeatures));
    let patch = Image::filled(8, 8, [0.5; 3]);
    match source.get_features(&patch, None) {
        Err(Error::Remote(m)) => assert_eq!(m, "feature model unavailable"),
        other => panic!("expected a remote error, got {other:?}"),
    }
    let camera = axis_camera(4, 3, 8.0);
    let d = source
        .get_depth(&PriorView { camera: &camera, stem: None }, Some(&Image::new(4, 3)))
        .unwrap();
    assert_eq!(d.map.get(3, 2), ramp(3, 2));
}

#[test]
fn wrong_size_response_is_a_dimension_error() {
    let source = client(&mock_service(Mode::WrongSize));
    let camera = axis_camera(4, 3, 8.0);
    let r = source.get_depth(&PriorView { camera: &camera, stem: None }, Some(&Image::new(4, 3)));
    assert!(matches!(r, Err(Error::DimensionMismatch { .. })), "{r:?}");
}

#[test]
fn unreachable_service_is_reported() {
    // bind then drop to find a port with nothing listening
    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let source = client(&addr);
    let camera = axis_camera(4, 3, 8.0);
    let r = source.get_depth(&PriorView { camera: &camera, stem: None }, Some(&Image::new(4, 3)));
    assert!(matches!(r, Err(Error::Service(_))), "{r:?}");
}

#[test]
fn file_backend_returns_stored_priors_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let map = Map::from_data(6, 4, (0..24).map(|_| rng.random_range(0.0..5.0f32) as f64).collect()).unwrap();
    write_pfm(&dir.path().join("view_001.pfm"), &DepthMap::new(map.clone())).unwrap();
    let emb = FeatureEmbedding::new((0..10).map(|_| rng.random_range(-1.0..1.0f32) as f64).collect());
    write_femb(&dir.path().join("view_001.0_0_8.femb"), &emb).unwrap();

    let source = PriorSource::File { dir: dir.path().to_path_buf() };
    let camera = axis_camera(6, 4, 8.0);
    let d = source
        .get_depth(&PriorView { camera: &camera, stem: Some("view_001") }, None)
        .unwrap();
    assert_eq!(d.map, map);
    let key = CropKey {
        stem: "view_001".into(),
        crop_id: "0_0_8".into(),
    };
    assert_eq!(source.get_features(&Image::new(8, 8), Some(&key)).unwrap(), emb);

    let missing = PriorView { camera: &camera, stem: Some("view_002") };
    assert!(matches!(source.get_depth(&missing, None), Err(Error::MissingPrior(_))));
    assert!(matches!(
        source.get_depth(&PriorView { camera: &camera, stem: None }, None),
        Err(Error::MissingPrior(_))
    ));
}

#[test]
fn oracle_depth_is_the_ground_truth_render() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gt = random_cloud(&mut rng, 30, Vec3::zeros(), 0.5, (0.05, 0.15));
    let camera = look_at(Vec3::new(0.5, -0.5, -3.0), 24, 20, 30.0);
    let source = PriorSource::oracle(gt.clone()).unwrap();
    let d = source.get_depth(&PriorView { camera: &camera, stem: None }, None).unwrap();
    let out = render(&gt, &camera, &RenderSettings::default()).unwrap();
    let mut valid = 0;
    for p in 0..d.map.data.len() {
        if d.valid[p] {
            valid += 1;
            assert!((d.map.data[p] - out.depth.data[p]).abs() <= 1e-6);
        } else {
            assert!(out.alpha_acc.data[p] <= 1e-6);
        }
    }
    assert!(valid > 0);
}

#[test]
fn backends_share_dimension_and_finiteness_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gt = random_cloud(&mut rng, 10, Vec3::zeros(), 0.5, (0.1, 0.2));
    let camera = look_at(Vec3::new(0.0, 0.0, -3.0), 10, 9, 12.0);
    let image = render(&gt, &camera, &RenderSettings::default()).unwrap().color;
    let dir = tempfile::tempdir().unwrap();
    write_pfm(&dir.path().join("v.pfm"), &DepthMap::new(Map::filled(10, 9, 2.0))).unwrap();
    let sources = [
        PriorSource::oracle(gt).unwrap(),
        client(&mock_service(Mode::Normal)),
        PriorSource::File { dir: dir.path().to_path_buf() },
    ];
    for s in &sources {
        let d = s.get_depth(&PriorView { camera: &camera, stem: Some("v") }, Some(&image)).unwrap();
        assert_eq!(d.dims(), (10, 9), "{}", s.name());
        assert!((0..d.map.data.len()).all(|p| !d.valid[p] || d.map.data[p].is_finite()));
    }
    let dims: Vec<usize> = sources[..2]
        .iter()
        .map(|s| s.get_features(&image.crop(sparsesplat::buffer::Rect { x: 0, y: 0, width: 8, height: 8 }), None).unwrap().dim())
        .collect();
    assert_eq!(dims[0], dims[1]);
}

#[test]
fn toy_extractor_scales_linearly_and_ignores_constants() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let toy = ToyExtractor::default();
    let patch = indexed_image(16, 16, |_| rng.random_range(0.0..1.0));
    let half = Image::from_data(16, 16, patch.data.iter().map(|v| v * 0.5).collect()).unwrap();
    let (a, b) = (toy.embed(&patch).unwrap(), toy.embed(&half).unwrap());
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((0.5 * x - y).abs() < 1e-12);
    }
    assert_eq!(toy.embed(&patch).unwrap(), a);
    let flat = toy.embed(&Image::filled(9, 11, [0.2, 0.7, 0.4])).unwrap();
    assert!(flat.values.iter().all(|v| v.abs() < 1e-12));
}

proptest! {
    #[test]
    fn toy_extractor_is_lipschitz(seed in any::<u64>(), w in 8usize..20, h in 8usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let toy = ToyExtractor::default();
        let a = indexed_image(w, h, |_| rng.random_range(0.0..1.0));
        let b = indexed_image(w, h, |_| rng.random_range(0.0..1.0));
        let ea = toy.embed(&a).unwrap();
        let eb = toy.embed(&b).unwrap();
        let de: f64 = ea.values.iter().zip(&eb.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let dp: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(de <= toy.lipschitz_bound(w, h) * dp + 1e-12);
    }
}

