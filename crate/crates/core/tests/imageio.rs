use std::fs;

use polaris_core::imageio::*;
use polaris_core::renderer::{render_view, RenderOptions};
use polaris_core::scene::parse_scene;
use proptest::prelude::*;

#[test]
fn header_and_payload_layout() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.pfm");
    write_pfm(&p, &PfmImage::new(3, 1, 1, vec![1.0, 2.0, 3.0])).unwrap();
    let bytes = fs::read(&p).unwrap();
    let header = b"PF\n1 1\n-1\n";
    assert_eq!(&bytes[..header.len()], header);
    let payload = &bytes[header.len()..];
    assert_eq!(payload.len(), 12);
    assert_eq!(payload, [1f32, 2.0, 3.0].iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>());

    write_pfm(&p, &PfmImage::new(1, 2, 1, vec![0.5, 0.25])).unwrap();
    assert!(fs::read(&p).unwrap().starts_with(b"Pf\n2 1\n-1\n"));
}

#[test]
fn round_trip_is_bitwise_including_nan() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("b.pfm");
    let nan = f32::from_bits(0x7fc0_1234);
    let img = PfmImage::new(3, 2, 2, vec![0.1, -0.0, nan, f32::INFINITY, 1e-40, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0]);
    write_pfm(&p, &img).unwrap();
    let back = read_pfm(&p).unwrap();
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.data), bits(&img.data));
    assert_eq!((back.channels, back.width, back.height), (3, 2, 2));
}

#[test]
fn big_endian_files_are_swapped() {
    // fixture assembled byte by byte, independent of the writer
    let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
    bytes.extend_from_slice(&[0x3f, 0x80, 0x00, 0x00]); // 1.0
    bytes.extend_from_slice(&[0xc0, 0x20, 0x00, 0x00]); // -2.5
    let img = decode_pfm(&bytes).unwrap();
    assert_eq!(img.data, vec![1.0, -2.5]);
    assert!(img.scale > 0.0);
}

#[test]
fn distinct_errors() {
    let mut short = b"PF\n2 2\n-1\n".to_vec();
    short.extend(std::iter::repeat_n(0u8, 11 * 4));
    assert!(matches!(decode_pfm(&short), Err(ImageError::Truncated { expected: 48, found: 44 })));
    assert!(matches!(decode_pfm(b"P6\n1 1\n255\n"), Err(ImageError::MalformedHeader(_))));
    assert!(matches!(decode_pfm(b"PF\n1 x\n-1\n"), Err(ImageError::MalformedHeader(_))));
    assert!(matches!(decode_pfm(b"PF\n1 1\n0\n"), Err(ImageError::MalformedHeader(_))));
    assert!(matches!(decode_pfm(b"PF\n1 1"), Err(ImageError::MalformedHeader(_))));
    assert!(matches!(read_pfm("/nonexistent/x.pfm"), Err(ImageError::Io { .. })));
}

#[test]
fn top_down_conversion() {
    let img = PfmImage::from_top_down(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(img.data, vec![3.0, 4.0, 1.0, 2.0]);
    assert_eq!(img.to_top_down(), vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    write_csv(&p, &["a", "b"], &[vec![1.0, 2.0]]).unwrap();
    assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,2\n");
    write_csv(&p, &["a", "b"], &[]).unwrap();
    assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n");
    write_csv(&p, &["x"], &[vec![0.1], vec![1.0 / 3.0], vec![-2.5e-300]]).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    let vals: Vec<f64> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
    assert_eq!(vals, vec![0.1, 1.0 / 3.0, -2.5e-300]);
    assert!(write_csv(&p, &["a", "b"], &[vec![1.0]]).is_err());
}

proptest! {
    #[test]
    fn csv_round_trips_any_finite_float(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        write_csv(&p, &["v"], &[vec![v]]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let back: f64 = text.lines().nth(1).unwrap().parse().unwrap();
        prop_assert_eq!(back.to_bits(), v.to_bits());
    }

    #[test]
    fn pfm_round_trips_any_bits(bits in proptest::collection::vec(any::<u32>(), 6)) {
        let img = PfmImage::new(3, 2, 1, bits.iter().map(|b| f32::from_bits(*b)).collect());
        let back = decode_pfm(&encode_pfm(&img)).unwrap();
        prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), bits);
    }

    #[test]
    fn decoder_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_pfm(&bytes);
    }
}

#[test]
fn view_directory_round_trip() {
    let scene = parse_scene(
        r#"{
        "camera": {"position": [0, 0, 4], "look_at": [0, 0, 0], "up": [0, 1, 0],
                   "vertical_fov": 40, "width": 9, "height": 7},
        "primitives": [{"type": "sphere", "center": [0, 0, 0], "radius": 1, "material": 0}],
        "materials": [{"m": 0, "roughness": 0.3, "eta": [0.2, 0.4, 1.3], "k": [3.4, 2.4, 1.8]}],
        "env": {"ambient": [0.5, 0.5, 0.5], "suns": [{"direction": [1, 1, 1], "angular_radius": 20, "radiance": [3, 3, 3]}]},
        "sampling": {"hemisphere_samples": 16}
    }"#,
    )
    .unwrap();
    let view = render_view(&scene, &RenderOptions::default());
    let dir = tempfile::tempdir().unwrap();
    write_view(dir.path(), &view).unwrap();
    for name in VIEW_FILES {
        assert!(dir.path().join(format!("{name}.pfm")).exists(), "{name}");
    }
    let back = read_view(dir.path()).unwrap();
    assert_eq!(back.mask, view.mask);
    assert_eq!(back.conductor_mask, view.conductor_mask);
    for (a, b) in back.image.pixels.iter().zip(&view.image.pixels) {
        for c in 0..3 {
            assert_eq!(a[c].s0, b[c].s0 as f32 as f64);
            assert_eq!(a[c].s2, b[c].s2 as f32 as f64);
        }
    }
    let s = ["s0", "s1", "s2"].map(|n| read_pfm(dir.path().join(format!("{n}.pfm"))).unwrap());
    let dolp = dolp_plane(&s[0], &s[1], &s[2]).unwrap();
    assert_eq!(encode_pfm(&dolp), fs::read(dir.path().join("dolp.pfm")).unwrap());
}

#[test]
fn polarizer_plane_round_trip_on_dyadic_values() {
    let s0 = PfmImage::new(1, 2, 1, vec![1.0, 0.75]);
    let s1 = PfmImage::new(1, 2, 1, vec![0.5, -0.25]);
    let s2 = PfmImage::new(1, 2, 1, vec![-0.25, 0.125]);
    let pol = polarizer_planes(&s0, &s1, &s2).unwrap();
    let back = stokes_planes(&pol).unwrap();
    assert_eq!(back[0].data, s0.data);
    assert_eq!(back[1].data, s1.data);
    assert_eq!(back[2].data, s2.data);
    let same = [0, 1, 2, 3].map(|_| PfmImage::new(1, 1, 1, vec![0.3]));
    let st = stokes_planes(&same).unwrap();
    assert_eq!((st[1].data[0], st[2].data[0]), (0.0, 0.0));
    let other = PfmImage::new(1, 1, 2, vec![0.0, 0.0]);
    assert!(matches!(dolp_plane(&s0, &s1, &other), Err(ImageError::DimensionMismatch(_))));
}
