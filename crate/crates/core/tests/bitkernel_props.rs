use proptest::prelude::*;

use siman_core::bitkernel::*;

mod common;
use common::{float_conv, float_dot};

fn bits(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..2, n)
}

fn bit_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (1usize..600).prop_flat_map(|n| (prop::collection::vec(0u8..2, n), prop::collection::vec(0u8..2, n)))
}

fn conv_case() -> impl Strategy<Value = (ConvGeometry, Vec<Vec<u8>>, Vec<f64>)> {
    (1usize..5, 1usize..9, 1usize..9, 1usize..4, 1usize..4, 1usize..3, 0usize..2, 1usize..6)
        .prop_filter("kernel fits", |&(_, h, w, kh, kw, _, p, _)| kh <= h + 2 * p && kw <= w + 2 * p)
        .prop_flat_map(|(c, h, w, kh, kw, s, p, f)| {
            let g = ConvGeometry { in_channels: c, height: h, width: w, kernel_h: kh, kernel_w: kw, stride: s, padding: p };
            (
                Just(g),
                prop::collection::vec(prop::collection::vec(0u8..2, g.patch_len()), f),
                prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { -1.0 }), c * h * w),
            )
        })
}

proptest! {
    #[test]
    fn pack_round_trip(x in bits(1..300)) {
        let v = BitVector::pack(&x).unwrap();
        prop_assert_eq!(v.unpack(), x.clone());
        prop_assert_eq!(v.len(), x.len());
        prop_assert_eq!(v.count_ones() as usize, x.iter().filter(|&&b| b == 1).count());
        for (i, &b) in x.iter().enumerate() {
            prop_assert_eq!(v.get(i), b == 1);
            prop_assert_eq!(v.words()[i / 64] >> (i % 64) & 1, b as u64);
        }
    }

    #[test]
    fn dot_matches_float((a, b) in bit_pair()) {
        let (pa, pb) = (BitVector::pack(&a).unwrap(), BitVector::pack(&b).unwrap());
        let d = binary_dot(&pa, &pb).unwrap();
        prop_assert_eq!(d as f64, float_dot(&a, &b));
        let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count();
        prop_assert_eq!(xnor_popcount(&pa, &pb).unwrap() as usize, agree);
    }

    #[test]
    fn parity_bound((a, b) in bit_pair()) {
        let n = a.len() as i64;
        let d = binary_dot(&BitVector::pack(&a).unwrap(), &BitVector::pack(&b).unwrap()).unwrap();
        prop_assert!(d.abs() <= n);
        prop_assert_eq!((d - n).rem_euclid(2), 0);
    }

    #[test]
    fn pad_bits_are_ignored((a, b) in bit_pair(), garbage in any::<u64>()) {
        let (pa, pb) = (BitVector::pack(&a).unwrap(), BitVector::pack(&b).unwrap());
        let clean = binary_dot(&pa, &pb).unwrap();
        let (mut da, mut db) = (pa.clone(), pb.clone());
        da.corrupt_padding(garbage);
        db.corrupt_padding(!garbage);
        prop_assert_eq!(binary_dot(&da, &db).unwrap(), clean);
        prop_assert_eq!(xnor_popcount(&da, &db).unwrap(), xnor_popcount(&pa, &pb).unwrap());
    }

    #[test]
    fn matvec_matches_float(rows in 1usize..20, n in 1usize..300, seed in any::<u64>(), garbage in any::<u64>()) {
        let mut s = seed;
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); (s >> 40) as u8 & 1 };
        let m: Vec<Vec<u8>> = (0..rows).map(|_| (0..n).map(|_| next()).collect()).collect();
        let x: Vec<u8> = (0..n).map(|_| next()).collect();
        let betas: Vec<f64> = (0..rows).map(|r| 0.5 + r as f64).collect();
        let mut pm_ = PackedMatrix::from_rows(&m).unwrap();
        let px = BitVector::pack(&x).unwrap();
        let out = binary_matvec(&pm_, &px, &betas).unwrap();
        for (r, row) in m.iter().enumerate() {
            prop_assert_eq!(out.raw[r] as f64, float_dot(row, &x));
            prop_assert_eq!(out.values[r], betas[r] * float_dot(row, &x));
        }
        pm_.corrupt_padding(garbage);
        prop_assert_eq!(binary_matvec(&pm_, &px, &betas).unwrap().raw, out.raw);
    }

    #[test]
    fn conv_matches_float((g, w, act) in conv_case()) {
        let m = PackedMatrix::from_rows(&w).unwrap();
        let betas = vec![1.0; w.len()];
        let out = binary_conv2d(&m, &act, &betas, &g).unwrap();
        let reference = float_conv(&w, &act, (g.in_channels, g.height, g.width), (g.kernel_h, g.kernel_w), g.stride, g.padding);
        let raw: Vec<f64> = out.raw.iter().map(|&v| v as f64).collect();
        prop_assert_eq!(raw, reference);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let n = 1000;
    let rows: Vec<Vec<u8>> = (0..257).map(|r| (0..n).map(|i| ((i * 7 + r * 13) % 5 % 2) as u8).collect()).collect();
    let x: Vec<u8> = (0..n).map(|i| (i % 3 % 2) as u8).collect();
    let m = PackedMatrix::from_rows(&rows).unwrap();
    let px = BitVector::pack(&x).unwrap();
    let betas = vec![0.37; rows.len()];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| binary_matvec(&m, &px, &betas).unwrap())
    };
    let one = run(1);
    for t in [2, 3, 8] {
        let other = run(t);
        assert_eq!(one.raw, other.raw);
        assert_eq!(one.values, other.values);
    }
}

#[test]
fn hand_examples() {
    let a = BitVector::pack(&[1, 0, 1]).unwrap();
    let b = BitVector::pack(&[1, 1, 0]).unwrap();
    assert_eq!(xnor_popcount(&a, &b).unwrap(), 1);
    assert_eq!(binary_dot(&a, &b).unwrap(), -1);
    let m = PackedMatrix::from_rows(&[vec![1u8, 0]]).unwrap();
    let out = binary_matvec(&m, &BitVector::pack(&[0, 0]).unwrap(), &[2.0]).unwrap();
    assert_eq!(out.values, vec![0.0]);
    assert_eq!(BitVector::pack(&[1u8; 64]).unwrap().words(), &[u64::MAX]);
}

#[test]
fn errors() {
    let a = BitVector::pack(&[1, 0]).unwrap();
    let b = BitVector::pack(&[1, 0, 1]).unwrap();
    assert!(matches!(binary_dot(&a, &b), Err(KernelError::LengthMismatch { .. })));
    assert!(matches!(BitVector::pack(&[]), Err(KernelError::Empty)));
    assert!(matches!(BitVector::pack(&[0, 2]), Err(KernelError::NotABit { index: 1, value: 2 })));
    let g = ConvGeometry { in_channels: 1, height: 2, width: 2, kernel_h: 3, kernel_w: 3, stride: 1, padding: 0 };
    let m = PackedMatrix::from_rows(&[vec![1u8; 9]]).unwrap();
    assert!(matches!(binary_conv2d(&m, &[1.0; 4], &[1.0], &g), Err(KernelError::BadGeometry(_))));
}
