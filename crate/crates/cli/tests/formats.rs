use fier::{packed, CacheDump, Dtype};
use fier_core::harness::Instance;
use fier_core::{dequantize, quantize_with, GroupSpec, KeyCache, ParamPrecision, QueryVector, ValueCache};
use half::f16;
use proptest::prelude::*;

fn half_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2000.0f64..2000.0, n).prop_map(|v| v.into_iter().map(|x| f16::from_f64(x).to_f64()).collect())
}

fn instance() -> impl Strategy<Value = Instance> {
    (1usize..40, 1usize..20, 1usize..4).prop_flat_map(|(len, dim, nq)| {
        (half_values(len * dim), half_values(len * dim), half_values(nq * dim)).prop_map(move |(k, v, q)| {
            let queries = q.chunks(dim).map(|c| QueryVector::new(c.to_vec()).unwrap()).collect();
            Instance::new(KeyCache::new(len, dim, k).unwrap(), ValueCache::new(len, dim, v).unwrap(), queries).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dump_round_trip_is_byte_identical(inst in instance(), wide in any::<bool>()) {
        let dtype = if wide { Dtype::F32 } else { Dtype::F16 };
        let dump = CacheDump::from_instance(&inst, dtype).unwrap();
        // Half values are exact in both widths.
        prop_assert_eq!(&dump.instance.keys, &inst.keys);
        let bytes = dump.encode().unwrap();
        let back = CacheDump::decode(&bytes).unwrap();
        prop_assert_eq!(&back.instance.queries, &inst.queries);
        prop_assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn packed_round_trip_is_byte_identical(inst in instance(), g in 1usize..50) {
        let pk = quantize_with(&inst.keys, GroupSpec::new(g).unwrap(), ParamPrecision::F16).unwrap();
        let bytes = packed::encode(&pk).unwrap();
        let back = packed::decode(&bytes).unwrap();
        prop_assert_eq!(dequantize(&back), dequantize(&pk));
        prop_assert_eq!(packed::encode(&back).unwrap(), bytes.clone());
        prop_assert_eq!(bytes.len() as u64, packed::HEADER_LEN as u64 + pk.payload_bytes());
    }

    #[test]
    fn truncation_is_always_rejected(inst in instance(), cut in 1usize..64) {
        let bytes = CacheDump::from_instance(&inst, Dtype::F16).unwrap().encode().unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(CacheDump::decode(&bytes[..keep]).is_err());
        let pk = quantize_with(&inst.keys, GroupSpec::new(4).unwrap(), ParamPrecision::F16).unwrap();
        let bytes = packed::encode(&pk).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(packed::decode(&bytes[..keep]).is_err());
    }
}

#[test]
fn half_index_of_half_dump_is_lossless_at_group_one() {
    let keys = KeyCache::new(3, 2, vec![0.5, -1.25, 3.0, 65504.0, -0.0, 1e-7]).unwrap();
    let rounded: Vec<f64> = keys.as_slice().iter().map(|&x| f16::from_f64(x).to_f64()).collect();
    let keys = KeyCache::new(3, 2, rounded).unwrap();
    let pk = quantize_with(&keys, GroupSpec::new(1).unwrap(), ParamPrecision::F16).unwrap();
    assert_eq!(dequantize(&pk), keys);
}
