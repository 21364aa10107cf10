use std::path::Path;

use curvewalk::dataio::synth::{sample_point, CYLINDER_HALF_HEIGHT, CYLINDER_RADIUS, TORUS_MAJOR, TORUS_MINOR};
use curvewalk::dataio::*;
use curvewalk::geometry::{norm, Labels, PointCloud};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two triangles in the z = 0 plane with areas 3 and 1.
fn three_to_one() -> Mesh {
    Mesh {
        vertices: vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [5.0, 0.0, 0.0], [6.0, 0.0, 0.0], [5.0, 2.0, 0.0]],
        faces: vec![[0, 1, 2], [3, 4, 5]],
    }
}

const TETRA: &str = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";

#[test]
fn surface_samples_follow_triangle_area() {
    let mesh = three_to_one();
    assert_eq!((mesh.triangle_area(0), mesh.triangle_area(1)), (3.0, 1.0));
    let n = 40_000;
    let s = sample_surface_detailed(&mesh, n, &mut rng(1)).unwrap();
    let big = s.iter().filter(|s| s.face == 0).count() as f64 / n as f64;
    assert!((big - 0.75).abs() <= 0.05 * 0.75, "fraction on the large triangle: {big}");
}

#[test]
fn barycentric_weights_are_valid_and_reproduce_the_point() {
    let mesh = parse_off(TETRA.as_bytes()).unwrap();
    for s in sample_surface_detailed(&mesh, 2000, &mut rng(2)).unwrap() {
        assert!(s.bary.iter().all(|&w| (0.0..=1.0).contains(&w)));
        assert!((s.bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let [a, b, c] = mesh.faces[s.face].map(|i| mesh.vertices[i]);
        for k in 0..3 {
            let want = s.bary[0] * a[k] + s.bary[1] * b[k] + s.bary[2] * c[k];
            assert!((s.point[k] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn mesh_samples_carry_face_normals() {
    let mesh = parse_off(TETRA.as_bytes()).unwrap();
    let cloud = sample_surface(&mesh, 500, &mut rng(3)).unwrap();
    let normals = cloud.normals.as_ref().unwrap();
    for (p, n) in cloud.coords.iter().zip(normals) {
        // every tetrahedron face is wound outward
        assert!((norm(*n) - 1.0).abs() < 1e-12);
        let outward = n[0] * (p[0] - 0.25) + n[1] * (p[1] - 0.25) + n[2] * (p[2] - 0.25);
        assert!(outward > 0.0, "{p:?} {n:?}");
    }
    let flat = Mesh { vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], faces: vec![[0, 1, 2]] };
    assert!(sample_surface(&flat, 4, &mut rng(0)).is_err());
    assert!(sample_surface(&mesh, 0, &mut rng(0)).is_err());
}

#[test]
fn sphere_and_cube_normals() {
    let mut r = rng(4);
    for _ in 0..2000 {
        let (p, n) = sample_point(ShapeKind::Sphere, &mut r);
        assert!((norm(p) - 1.0).abs() < 1e-12);
        assert_eq!(p, n);
        let (p, n) = sample_point(ShapeKind::Cube, &mut r);
        let axis = n.iter().position(|&v| v != 0.0).unwrap();
        assert_eq!(n.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(p[axis], n[axis]);
        assert!(p.iter().all(|v| v.abs() <= 1.0));
    }
}

/// Unit gradient of an implicit surface by central differences.
fn implicit_normal(f: impl Fn([f64; 3]) -> f64, p: [f64; 3]) -> [f64; 3] {
    let h = 1e-6;
    let g: [f64; 3] = std::array::from_fn(|k| {
        let (mut a, mut b) = (p, p);
        a[k] += h;
        b[k] -= h;
        (f(a) - f(b)) / (2.0 * h)
    });
    let n = norm(g);
    g.map(|v| v / n)
}

#[test]
fn torus_normals_match_the_implicit_gradient() {
    let torus = |q: [f64; 3]| ((q[0] * q[0] + q[1] * q[1]).sqrt() - TORUS_MAJOR).powi(2) + q[2] * q[2] - TORUS_MINOR.powi(2);
    let mut r = rng(5);
    for _ in 0..2000 {
        let (p, n) = sample_point(ShapeKind::Torus, &mut r);
        assert!(torus(p).abs() < 1e-12);
        let want = implicit_normal(torus, p);
        assert!(n.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-6), "{n:?} vs {want:?}");
    }
}

#[test]
fn cylinder_normals_point_out_of_the_side_or_caps() {
    let mut r = rng(6);
    let (mut side, mut cap) = (0, 0);
    for _ in 0..4000 {
        let (p, n) = sample_point(ShapeKind::Cylinder, &mut r);
        if n[2] == 0.0 {
            side += 1;
            let radial = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((radial - CYLINDER_RADIUS).abs() < 1e-12);
            assert!((n[0] - p[0] / radial).abs() < 1e-12 && (n[1] - p[1] / radial).abs() < 1e-12);
        } else {
            cap += 1;
            assert_eq!(p[2], n[2] * CYLINDER_HALF_HEIGHT);
        }
    }
    // side area 2πrh·2 against two caps of πr²: 3:1 for these dimensions
    let side_share = side as f64 / (side + cap) as f64;
    let want = 2.0 * CYLINDER_HALF_HEIGHT / (2.0 * CYLINDER_HALF_HEIGHT + CYLINDER_RADIUS);
    assert!((side_share - want).abs() < 0.03, "{side_share} vs {want}");
}

#[test]
fn synthetic_datasets() {
    let d = synth_shapes(&ShapeKind::ALL, 3, 128, 7, Split::Train).unwrap();
    assert_eq!(d.len(), 12);
    assert_eq!(d.labels(), vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
    assert_eq!(d.classes, vec!["sphere", "cube", "torus", "cylinder"]);
    for c in &d.clouds {
        assert_eq!(c.len(), 128);
        let radius = c.coords.iter().map(|&q| norm(q)).fold(0.0, f64::max);
        assert!((radius - 1.0).abs() < 1e-12);
        assert!(c.normals.as_ref().unwrap().iter().all(|n| (norm(*n) - 1.0).abs() < 1e-12));
    }
    assert_eq!(d, synth_shapes(&ShapeKind::ALL, 3, 128, 7, Split::Train).unwrap());
    let test = synth_shapes(&ShapeKind::ALL, 3, 128, 7, Split::Test).unwrap();
    assert!(d.clouds.iter().zip(&test.clouds).all(|(a, b)| a.coords != b.coords));
    // a cloud does not depend on how many others are drawn
    let more = synth_shapes(&ShapeKind::ALL[..1], 5, 128, 7, Split::Train).unwrap();
    assert_eq!(more.clouds[..3], d.clouds[..3]);
    assert!(synth_shapes(&[], 3, 128, 7, Split::Train).is_err());
    assert!(synth_shapes(&ShapeKind::ALL, 0, 128, 7, Split::Train).is_err());
    assert_eq!("torus".parse::<ShapeKind>().unwrap(), ShapeKind::Torus);
    assert!("cone".parse::<ShapeKind>().is_err());
}

#[test]
fn pts_roundtrip() {
    let base = sample_shape(ShapeKind::Torus, 50, &mut rng(8)).unwrap();
    let with_labels = base.clone().with_labels(Labels::PerPoint((0..50).map(|i| i % 3).collect()));
    let bare = PointCloud::new(base.coords.clone()).unwrap();
    for cloud in [base, with_labels, bare] {
        let mut buf = Vec::new();
        write_points(&mut buf, &cloud).unwrap();
        let back = read_points(buf.as_slice()).unwrap();
        assert_eq!(back.labels, cloud.labels);
        assert_eq!(back.normals.is_some(), cloud.normals.is_some());
        let close = |a: &[[f64; 3]], b: &[[f64; 3]]| {
            a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() <= 1e-8 * x.abs().max(1e-300))
        };
        assert!(close(&back.coords, &cloud.coords));
        if let (Some(a), Some(b)) = (&back.normals, &cloud.normals) {
            assert!(close(a, b));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.pts");
    let cloud = sample_shape(ShapeKind::Cube, 10, &mut rng(9)).unwrap();
    write_points_file(&path, &cloud).unwrap();
    assert_eq!(read_points_file(&path).unwrap().len(), 10);
}

#[test]
fn pts_errors() {
    for bad in [
        "",
        "PTX 1 -\n0 0 0\n",
        "PTS 2 -\n0 0 0\n",
        "PTS 1 q\n0 0 0\n",
        "PTS 1 n\n0 0 0\n",
        "PTS 1 -\n0 x 0\n",
        "PTS 0 -\n",
        "PTS 1 l\n0 0 0 -1\n",
    ] {
        assert!(read_points(bad.as_bytes()).is_err(), "{bad:?}");
    }
}

#[test]
fn off_roundtrip_and_errors() {
    let mesh = parse_off(TETRA.as_bytes()).unwrap();
    assert_eq!(parse_off(write_off(&mesh).as_bytes()).unwrap(), mesh);
    let odd = Mesh { vertices: vec![[0.1, 1e-300, -3.5e7], [1.0 / 3.0, 2.0, 0.0], [0.0, 0.0, 1.0]], faces: vec![[0, 1, 2]] };
    assert_eq!(parse_off(write_off(&odd).as_bytes()).unwrap(), odd);

    assert!(matches!(parse_off(b"PLY\n"), Err(OffError::MissingHeader { line: 1 })));
    assert!(matches!(parse_off(b"OFF\n3 1\n0 0 0\n"), Err(OffError::Truncated { what: "vertices", .. })));
    assert!(matches!(parse_off(b"OFF\n1 0\nnan 0 0\n"), Err(OffError::BadNumber { line: 3, .. })));
    assert!(matches!(parse_off(b"OFF\n3 1\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n"), Err(OffError::IndexOutOfRange { index: 5, .. })));
    assert!(matches!(parse_off(b"OFF\n3 1\n0 0 0\n1 0 0\n0 1 0\n2 0 1\n"), Err(OffError::BadFace { line: 6, .. })));
    assert!(matches!(parse_off(b"OFF\n-1 0\n"), Err(OffError::BadCounts { .. })));
}

fn write_mesh(path: &Path, mesh: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, mesh).unwrap();
}

#[test]
fn dataset_loading() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let shifted = TETRA.replace("0 0 1\n3", "0 0 2\n3");
    write_mesh(&root.join("b_tetra/train/x.off"), TETRA);
    write_mesh(&root.join("b_tetra/train/y.OFF"), &shifted);
    write_mesh(&root.join("b_tetra/train/notes.txt"), "ignored");
    write_mesh(&root.join("b_tetra/test/z.off"), TETRA);
    write_mesh(&root.join("a_flat/train/f.off"), &write_off(&three_to_one()));
    write_mesh(&root.join("a_flat/test/f.off"), &write_off(&three_to_one()));

    let d = load_dataset(root, 64, Split::Train, None).unwrap();
    assert_eq!(d.classes, vec!["a_flat", "b_tetra"]);
    assert_eq!(d.labels(), vec![0, 1, 1]);
    assert!(d.clouds.iter().all(|c| c.len() == 64));
    assert_eq!(d, load_dataset(root, 64, Split::Train, None).unwrap());
    // the sampling stream is keyed by file content, not by path
    let test = load_dataset(root, 64, Split::Test, None).unwrap();
    assert_eq!(test.clouds[1].coords, d.clouds[1].coords);
    assert_ne!(d.clouds[2].coords, d.clouds[1].coords);

    let only = load_dataset(root, 64, Split::Train, Some(&["b_tetra".to_string()])).unwrap();
    assert_eq!(only.labels(), vec![0, 0]);
    assert!(load_dataset(root, 64, Split::Train, Some(&["missing".to_string()])).is_err());
    assert!(load_dataset(root, 64, Split::Train, Some(&[])).is_err());
    assert!(load_dataset(&root.join("nope"), 64, Split::Train, None).is_err());

    write_mesh(&root.join("c_broken/train/bad.off"), "OFF\n3 1\n0 0 0\n");
    write_mesh(&root.join("c_broken/test/bad.off"), "OFF\n3 1\n0 0 0\n");
    let err = load_dataset(root, 64, Split::Train, None).unwrap_err().to_string();
    assert!(err.contains("bad.off"), "{err}");
    std::fs::create_dir_all(root.join("d_empty/train")).unwrap();
    assert!(load_dataset(root, 64, Split::Train, Some(&["d_empty".to_string()])).is_err());
}

#[test]
fn fnv1a_reference_values() {
    assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
    assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    assert_eq!(fnv1a(b"foobar"), 0x8594_4171_f739_67e8);
}

fn off_tokens() -> impl Strategy<Value = String> {
    let tok = prop_oneof![
        Just("OFF".to_string()),
        Just("\n".to_string()),
        Just("#".to_string()),
        Just(" ".to_string()),
        (0usize..12).prop_map(|v| v.to_string()),
        any::<u64>().prop_map(|v| v.to_string()),
        any::<f64>().prop_map(|v| v.to_string()),
        "[ -~]{0,6}",
    ];
    prop::collection::vec(tok, 0..40).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn off_parser_never_panics_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse_off(&bytes);
    }

    #[test]
    fn off_parser_never_panics_on_token_soup(text in off_tokens()) {
        if let Ok(mesh) = parse_off(text.as_bytes()) {
            prop_assert!(mesh.faces.iter().flatten().all(|&i| i < mesh.vertices.len()));
        }
    }

    #[test]
    fn parsed_meshes_roundtrip(
        verts in prop::collection::vec(prop::array::uniform3(-1e6f64..1e6), 3..10),
        faces in prop::collection::vec(prop::array::uniform3(0usize..3), 0..8),
    ) {
        let mesh = Mesh { vertices: verts, faces };
        prop_assert_eq!(parse_off(write_off(&mesh).as_bytes()).unwrap(), mesh);
    }
}
