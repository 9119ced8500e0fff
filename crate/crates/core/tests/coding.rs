use nrx_core::coding::*;

#[test]
#[ignore = "rewrites the bundled code file"]
fn regenerate_bundled_code() {
    let code = LdpcCode::generate(648, 3, 6, 1).unwrap();
    std::fs::write(
        concat!(env!("CARGO_MANIFEST_DIR"), "/data/ldpc_648_324.txt"),
        code.to_text(),
    )
    .unwrap();
}

use nrx_core::phy::{ebn0_to_n0, Constellation, LlrMethod};
use nrx_core::seed;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_bits(n: usize, rng: &mut impl Rng) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2)).collect()
}

fn perfect_llrs(codeword: &[u8], magnitude: f64) -> Vec<f64> {
    codeword
        .iter()
        .map(|&b| if b == 1 { magnitude } else { -magnitude })
        .collect()
}

#[test]
fn bundled_code_matches_regeneration() {
    let shipped = LdpcCode::default_code();
    let fresh = LdpcCode::generate(648, 3, 6, shipped.seed()).unwrap();
    assert_eq!(shipped.to_text(), fresh.to_text());
    assert_eq!((shipped.n(), shipped.k()), (648, 324));
    assert!((shipped.rate() - 0.5).abs() < 1e-6);
}

#[test]
fn bundled_code_is_regular_and_four_cycle_free() {
    let code = LdpcCode::default_code();
    assert!(code.checks().iter().all(|c| c.len() == 6));
    let mut col = vec![0; 648];
    code.checks().iter().flatten().for_each(|&v| col[v] += 1);
    assert!(col.iter().all(|&d| d == 3));
    for (i, a) in code.checks().iter().enumerate() {
        for b in &code.checks()[i + 1..] {
            assert!(a.iter().filter(|v| b.contains(v)).count() <= 1);
        }
    }
}

#[test]
fn zero_info_encodes_to_zero_codeword() {
    let code = LdpcCode::default_code();
    let c = code.encode(&vec![0; 324]).unwrap();
    assert_eq!(c.len(), 648);
    assert!(c.iter().all(|&b| b == 0));
}

#[test]
fn codewords_satisfy_parity_and_are_systematic() {
    let code = LdpcCode::default_code();
    let mut rng = seed::rng(1);
    for _ in 0..200 {
        let info = random_bits(324, &mut rng);
        let c = code.encode(&info).unwrap();
        assert_eq!(c.len(), 648);
        assert_eq!(&c[..324], &info[..]);
        assert!(code.is_codeword(&c));
    }
    assert!(matches!(
        code.encode(&[0; 10]),
        Err(CodingError::Length {
            expected: 324,
            got: 10
        })
    ));
}

#[test]
fn noiseless_llrs_decode_in_one_iteration() {
    let code = LdpcCode::default_code();
    let info = random_bits(324, &mut seed::rng(2));
    let c = code.encode(&info).unwrap();
    for kind in [DecoderKind::MinSum, DecoderKind::SumProduct] {
        let d = code
            .decode(&perfect_llrs(&c, 20.0), kind, DEFAULT_MAX_ITERATIONS)
            .unwrap();
        assert!(d.converged);
        assert_eq!(d.iterations, 1);
        assert_eq!(d.info(), &info[..]);
    }
}

#[test]
fn single_flipped_bit_is_corrected() {
    let code = LdpcCode::default_code();
    let mut rng = seed::rng(3);
    for kind in [DecoderKind::MinSum, DecoderKind::SumProduct] {
        for _ in 0..50 {
            let info = random_bits(324, &mut rng);
            let c = code.encode(&info).unwrap();
            let mut llr = perfect_llrs(&c, 10.0);
            let pos = rng.random_range(0..648);
            llr[pos] = -llr[pos];
            let d = code.decode(&llr, kind, DEFAULT_MAX_ITERATIONS).unwrap();
            assert!(d.converged, "{kind:?} flip at {pos}");
            assert_eq!(d.codeword, c);
        }
    }
}

#[test]
fn all_zero_llrs_do_not_converge_and_count_as_error() {
    let code = LdpcCode::default_code();
    let info = vec![1u8; 324];
    for kind in [DecoderKind::MinSum, DecoderKind::SumProduct] {
        let d = code.decode(&[0.0; 648], kind, 20).unwrap();
        assert!(!d.converged);
        assert_eq!(d.iterations, 20);
        assert_eq!(d.codeword.len(), 648);
        let mut s = ErrorStats::default();
        s.record(d.info(), &info);
        assert_eq!(s.block_errors, 1);
    }
    assert!(code.decode(&[0.0; 10], DecoderKind::MinSum, 5).is_err());
}

#[test]
fn bler_counts_blocks_with_any_error() {
    let truth: Vec<Vec<u8>> = (0..100).map(|i| vec![(i % 2) as u8; 8]).collect();
    let (p, (lo, hi)) = bler(&truth, &truth).unwrap();
    assert_eq!(p, 0.0);
    assert_eq!(lo, 0.0);
    assert!(hi > 0.0 && hi < 0.05);
    let mut decoded = truth.clone();
    for d in decoded.iter_mut().take(10) {
        d[3] ^= 1;
    }
    let (p, (lo, hi)) = bler(&decoded, &truth).unwrap();
    assert_eq!(p, 0.10);
    assert!(lo < 0.10 && hi > 0.10);
    assert!(bler(&[], &[]).is_err());
}

// Wilson interval reference values at z = 1.96 computed by hand from the
// closed form; width scales as 1/sqrt(n) at fixed p.
#[test]
fn wilson_interval_matches_closed_form_and_shrinks() {
    let (lo, hi) = wilson_interval(10, 100, Z95);
    assert!((lo - 0.055_229).abs() < 1e-5, "{lo}");
    assert!((hi - 0.174_366).abs() < 1e-5, "{hi}");
    let width = |n: u64| {
        let (l, h) = wilson_interval(n / 10, n, Z95);
        h - l
    };
    for n in [1_000u64, 10_000, 100_000] {
        let r = width(n) / width(4 * n);
        assert!((r - 2.0).abs() < 0.02, "n {n}: ratio {r}");
    }
}

#[test]
fn segmentation_of_tti_capacity() {
    let s = Segmentation::new(18_432, 648).unwrap();
    assert_eq!(s.codewords, 28);
    assert_eq!(s.pad_bits(), 288);
    let cws: Vec<Vec<u8>> = (0..28).map(|i| vec![(i % 2) as u8; 648]).collect();
    let pad = pad_bits(288, 9);
    let bits = s.assemble(&cws, &pad).unwrap();
    assert_eq!(bits.len(), 18_432);
    assert_eq!(&bits[18_144..], &pad[..]);
    let parts: Vec<&[u8]> = s.split(&bits).unwrap().collect();
    assert_eq!(parts.len(), 28);
    assert_eq!(parts[1], &cws[1][..]);
    assert!(Segmentation::new(100, 648).is_err());
    assert!(s.split(&bits[1..]).is_err());
    assert!(s.assemble(&cws[1..], &pad).is_err());
}

#[test]
fn zero_noise_round_trip_for_many_blocks() {
    let code = LdpcCode::default_code();
    let mut rng = seed::rng(4);
    for _ in 0..1000 {
        let info = random_bits(324, &mut rng);
        let c = code.encode(&info).unwrap();
        let d = code
            .decode(
                &perfect_llrs(&c, 8.0),
                DecoderKind::MinSum,
                DEFAULT_MAX_ITERATIONS,
            )
            .unwrap();
        assert_eq!(d.info(), &info[..]);
    }
}

#[test]
fn parse_rejects_bad_files() {
    assert!(LdpcCode::parse("").is_err());
    assert!(LdpcCode::parse("4 2\n").is_err());
    assert!(LdpcCode::parse("4 2 0\n0 9\n").is_err());
    assert!(LdpcCode::parse("4 2 0\n0 x\n").is_err());
    // parity columns 2, 3 dependent
    let singular = "4 2 0\n0 0\n0 2\n0 3\n1 1\n1 2\n1 3\n";
    assert!(matches!(
        LdpcCode::parse(singular),
        Err(CodingError::RankDeficient { .. })
    ));
    let ok = LdpcCode::parse("4 2 7\n0 0\n0 2\n1 1\n1 3\n").unwrap();
    assert_eq!(ok.encode(&[1, 0]).unwrap(), vec![1, 0, 1, 0]);
    assert_eq!(
        LdpcCode::parse(&ok.to_text()).unwrap().to_text(),
        ok.to_text()
    );
}

fn awgn_block_errors(
    code: &LdpcCode,
    ebn0_db: f64,
    blocks: usize,
    kind: DecoderKind,
) -> (usize, f64) {
    let qam = Constellation::square(6).unwrap();
    let n0 = ebn0_to_n0(ebn0_db, 6, code.rate());
    let sd = (n0 / 2.0).sqrt();
    let mut rng = seed::rng(5);
    let mut errors = 0;
    let mut llr = vec![0.0; 648];
    for _ in 0..blocks {
        let info = random_bits(324, &mut rng);
        let c = code.encode(&info).unwrap();
        for (bits, out) in c.chunks(6).zip(llr.chunks_mut(6)) {
            let x = qam.map(bits).unwrap();
            let z = Complex64::new(
                sd * rng.sample::<f64, _>(StandardNormal),
                sd * rng.sample::<f64, _>(StandardNormal),
            );
            qam.llr_into(x + z, n0, LlrMethod::Exact, out);
        }
        let d = code.decode(&llr, kind, DEFAULT_MAX_ITERATIONS).unwrap();
        errors += usize::from(d.info() != &info[..]);
    }
    (errors, n0)
}

#[test]
fn coded_bler_beats_uncoded_block_error() {
    let code = LdpcCode::default_code();
    let qam = Constellation::square(6).unwrap();
    for ebn0 in [6.0, 7.0, 8.0] {
        let blocks = 200;
        let (errors, _) = awgn_block_errors(&code, ebn0, blocks, DecoderKind::MinSum);
        // uncoded: the same 324 info bits sent at the same Eb/N0 without coding
        let n0_uncoded = ebn0_to_n0(ebn0, 6, 1.0);
        let mut rng = seed::rng(6);
        let sd = (n0_uncoded / 2.0).sqrt();
        let mut uncoded_errors = 0;
        let mut llr = [0.0; 6];
        for _ in 0..blocks {
            let info = random_bits(324, &mut rng);
            let mut wrong = false;
            for bits in info.chunks(6) {
                let x = qam.map(bits).unwrap();
                let z = Complex64::new(
                    sd * rng.sample::<f64, _>(StandardNormal),
                    sd * rng.sample::<f64, _>(StandardNormal),
                );
                qam.llr_into(x + z, n0_uncoded, LlrMethod::Exact, &mut llr);
                wrong |= llr.iter().zip(bits).any(|(l, b)| (*l > 0.0) != (*b == 1));
            }
            uncoded_errors += usize::from(wrong);
        }
        println!("{ebn0} dB: coded {errors}/{blocks} uncoded {uncoded_errors}/{blocks}");
        assert!(
            errors < uncoded_errors,
            "{ebn0} dB: coded {errors} uncoded {uncoded_errors}"
        );
    }
}

#[test]
fn decoders_show_a_waterfall() {
    let code = LdpcCode::default_code();
    for kind in [DecoderKind::MinSum, DecoderKind::SumProduct] {
        let (low, _) = awgn_block_errors(&code, 3.0, 100, kind);
        let (high, _) = awgn_block_errors(&code, 9.0, 100, kind);
        println!("{kind:?}: 3 dB {low}/100, 9 dB {high}/100");
        assert!(low > 50, "{kind:?} {low}");
        assert!(high <= 2, "{kind:?} {high}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoding_is_linear(a in proptest::collection::vec(0u8..2, 324), b in proptest::collection::vec(0u8..2, 324)) {
        let code = LdpcCode::default_code();
        let sum: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        let ca = code.encode(&a).unwrap();
        let cb = code.encode(&b).unwrap();
        let cs: Vec<u8> = ca.iter().zip(&cb).map(|(x, y)| x ^ y).collect();
        prop_assert_eq!(code.encode(&sum).unwrap(), cs);
    }
}
