mod common;

use common::random_grid;
use pinrefine_core::posterior::{read_posteriors, write_posteriors, PosteriorError, PosteriorMatrix, HEADER_LEN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix<R: Rng>(rng: &mut R) -> PosteriorMatrix {
    let t = rng.gen_range(0..=12);
    let v = rng.gen_range(1..=9);
    let g = random_grid(rng, t, v, 6.0);
    let mut values: Vec<f32> = g.values.iter().map(|&x| x as f32).collect();
    // sprinkle hard zeros, keeping at least one finite entry per row
    if v > 1 {
        for row in values.chunks_mut(v) {
            if rng.gen_bool(0.3) {
                row[rng.gen_range(1..v)] = f32::NEG_INFINITY;
            }
        }
    }
    PosteriorMatrix::new_unchecked(t, v, values).unwrap()
}

#[test]
fn round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut done = 0;
    while done < 150 {
        let m = random_matrix(&mut rng);
        if m.validate().is_err() {
            continue;
        }
        let mut buf = Vec::new();
        let n = write_posteriors(&m, &mut buf).unwrap();
        assert_eq!(n, HEADER_LEN + 4 * m.values().len());
        let back = read_posteriors(buf.as_slice()).unwrap();
        assert_eq!(back.frames(), m.frames());
        assert_eq!(back.vocab_size(), m.vocab_size());
        let bits = |x: &PosteriorMatrix| x.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        done += 1;
    }
}

fn valid_bytes() -> Vec<u8> {
    let h = 0.5f32.ln();
    let m = PosteriorMatrix::new(2, 2, vec![h, h, h, h]).unwrap();
    let mut buf = Vec::new();
    write_posteriors(&m, &mut buf).unwrap();
    buf
}

#[test]
fn malformed_inputs_have_distinct_errors() {
    let mut bad_magic = valid_bytes();
    bad_magic[0] = b'X';
    assert!(matches!(read_posteriors(bad_magic.as_slice()), Err(PosteriorError::BadMagic(_))));

    let mut bad_version = valid_bytes();
    bad_version[4] = 2;
    assert!(matches!(
        read_posteriors(bad_version.as_slice()),
        Err(PosteriorError::VersionMismatch(2))
    ));

    let full = valid_bytes();
    assert!(matches!(
        read_posteriors(&full[..full.len() - 3]),
        Err(PosteriorError::Truncated { .. })
    ));
    assert!(matches!(read_posteriors(&full[..10]), Err(PosteriorError::Truncated { .. })));

    let mut unnormalized = valid_bytes();
    unnormalized[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&0.0f32.to_le_bytes());
    assert!(matches!(
        read_posteriors(unnormalized.as_slice()),
        Err(PosteriorError::NotNormalized { row: 0, .. })
    ));

    let mut nan = valid_bytes();
    nan[HEADER_LEN + 4..HEADER_LEN + 8].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(
        read_posteriors(nan.as_slice()),
        Err(PosteriorError::InvalidValue { row: 0, col: 1, .. })
    ));
}

#[test]
fn linear_domain_files_are_converted() {
    let mut buf = valid_bytes();
    buf[5] = 0;
    for (i, v) in [0.25f32, 0.75, 1.0, 0.0].iter().enumerate() {
        let at = HEADER_LEN + 4 * i;
        buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
    }
    let m = read_posteriors(buf.as_slice()).unwrap();
    assert!((m.row(0)[1] as f64 - 0.75f64.ln()).abs() < 1e-6);
    assert_eq!(m.row(1)[1], f32::NEG_INFINITY);
}
