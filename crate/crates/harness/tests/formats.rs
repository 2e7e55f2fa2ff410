use std::fs;

use bast_core::model::{Architecture, RobustnessTag};
use bast_core::{Shape, Tensor};
use bast_harness::dataset::{load_dataset, DatasetSource};
use bast_harness::synth::{self, SynthConfig};
use bast_harness::{idx, tensor_io, weights, HarnessError};

#[test]
fn ten_thousand_image_idx_pair_loads() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = synth::generate(&SynthConfig {
        side: 28,
        ..SynthConfig::new(10_000, 11)
    });
    let img = dir.path().join("t10k-images-idx3-ubyte");
    let lab = dir.path().join("t10k-labels-idx1-ubyte");
    fs::write(&img, idx::encode_images(&images)).unwrap();
    fs::write(&lab, idx::encode_labels(&labels)).unwrap();

    let data = load_dataset(&DatasetSource::Idx { images: img, labels: lab }, None).unwrap();
    assert_eq!(data.len(), 10_000);
    assert_eq!(data.image_shape().dims(), &[1, 28, 28]);
    assert_eq!(data.num_classes(), 10);
    let first = &data.images()[0];
    assert!(first.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(first.as_slice()[5], images.pixels[5] as f64 / 255.0);
}

#[test]
fn truncated_idx_reports_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = synth::generate(&SynthConfig::new(3, 0));
    let img = dir.path().join("imgs");
    let lab = dir.path().join("labs");
    let bytes = idx::encode_images(&images);
    fs::write(&img, &bytes[..bytes.len() - 10]).unwrap();
    fs::write(&lab, idx::encode_labels(&labels)).unwrap();
    let err = load_dataset(&DatasetSource::Idx { images: img, labels: lab }, None).unwrap_err();
    let msg = err.to_string();
    let expected = 16 + 3 * 256;
    assert!(msg.contains(&format!("expected {expected} bytes, found {}", expected - 10)), "{msg}");
}

#[test]
fn csv_row_maps_label_and_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut row = vec!["7".to_string()];
    row.extend(std::iter::repeat_n("0".to_string(), 15));
    row.push("255".into());
    fs::write(&path, row.join(",") + "\n").unwrap();
    let data = load_dataset(&DatasetSource::Csv { path }, Some(10)).unwrap();
    assert_eq!(data.labels(), &[7]);
    assert_eq!(data.image_shape().dims(), &[1, 4, 4]);
    assert_eq!(*data.images()[0].as_slice().last().unwrap(), 1.0);
}

#[test]
fn weights_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let shape = Shape::new(vec![1, 8, 8]).unwrap();
    for (i, arch) in [Architecture::Mlp { hidden: 5 }, Architecture::Cnn { channels: 3 }]
        .into_iter()
        .enumerate()
    {
        let model = arch.build(format!("m{i}"), &shape, 4, RobustnessTag::Robust, i as u64).unwrap();
        let path = dir.path().join(format!("m{i}.bin"));
        weights::save(&model, &path).unwrap();
        let back = weights::load(&path).unwrap();
        assert_eq!(back, model);
        let again = dir.path().join(format!("m{i}-again.bin"));
        weights::save(&back, &again).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }
}

#[test]
fn corrupt_weight_files_fail_with_context() {
    let shape = Shape::new(vec![1, 4, 4]).unwrap();
    let model = Architecture::Mlp { hidden: 3 }
        .build("m", &shape, 2, RobustnessTag::Easy, 0)
        .unwrap();
    let bytes = weights::encode(&model);

    // layer count says one more layer than the file holds
    let count_at = 8 + 1 + 1 + 4 + 1 + 4 + 3 * 4;
    let mut more = bytes.clone();
    more[count_at] += 1;
    let msg = weights::decode(&more, "m.bin").unwrap_err().to_string();
    assert!(msg.contains("declares 5 layers"), "{msg}");

    let mut fewer = bytes.clone();
    fewer[count_at] -= 1;
    let msg = weights::decode(&fewer, "m.bin").unwrap_err().to_string();
    assert!(msg.contains("trailing"), "{msg}");

    // a weight extent that disagrees with the next layer
    let mut bad = bytes.clone();
    let dense_rows = count_at + 4 + 1 + 1 + 4;
    bad[dense_rows] = 4;
    let err = weights::decode(&bad, "m.bin").unwrap_err();
    assert!(matches!(err, HarnessError::Parse { .. } | HarnessError::Core(_)), "{err}");
}

#[test]
fn tensor_files_and_previews() {
    let dir = tempfile::tempdir().unwrap();
    let clean = Tensor::new(vec![1, 2, 2], vec![0.0, 0.25, 0.5, 1.0]).unwrap();
    let adv = Tensor::new(vec![1, 2, 2], vec![0.05, 0.2, 0.5, 0.95]).unwrap();
    let path = dir.path().join("x.bin");
    tensor_io::save(&adv, &path).unwrap();
    assert_eq!(&fs::read(&path).unwrap()[..8], b"BASTIMG1");
    assert_eq!(tensor_io::load(&path).unwrap(), adv);
    tensor_io::write_previews(dir.path(), "s", &clean, &adv, 0.05).unwrap();
    let noise = fs::read(dir.path().join("s_noise.pgm")).unwrap();
    assert_eq!(&noise[noise.len() - 4..], &[255, 0, 128, 0]);
}
