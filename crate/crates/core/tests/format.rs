use proptest::prelude::*;
use xaic::compress::{code_limit, model_size_bytes, QuantizedLayer, QuantizedModel};
use xaic::format::{
    deserialize_net, deserialize_quantized, serialize_net, serialize_quantized, ModelArtifact, FORMAT_VERSION,
};
use xaic::nn::init_net;
use xaic::Error;

fn layer(fan_in: usize) -> impl Strategy<Value = QuantizedLayer> {
    prop::collection::vec(2u8..=16, 1..6).prop_flat_map(move |bits| {
        let width = bits.len();
        let codes: Vec<_> = bits
            .iter()
            .map(|&b| prop::collection::vec(-code_limit(b)..=code_limit(b), fan_in))
            .collect();
        (
            Just(bits),
            codes,
            prop::collection::vec(1e-6f32..100.0, width),
            prop::collection::vec(-10.0f32..10.0, width),
        )
            .prop_map(move |(bits, codes, scales, biases)| QuantizedLayer {
                fan_in,
                bits,
                scales,
                biases,
                codes: codes.concat(),
            })
    })
}

fn model() -> impl Strategy<Value = QuantizedModel> {
    (1usize..5).prop_flat_map(|input_dim| {
        layer(input_dim).prop_flat_map(move |first| {
            let width = first.bits.len();
            layer(width).prop_map(move |second| QuantizedModel {
                input_dim,
                classes: second.bits.len(),
                layers: vec![first.clone(), second],
            })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quantized_round_trip(m in model()) {
        let bytes = serialize_quantized(&m);
        prop_assert_eq!(bytes.len() as u64, model_size_bytes(&m).total());
        let back = deserialize_quantized(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(serialize_quantized(&back), bytes);
    }

    #[test]
    fn mutated_bytes_decode_canonically_or_fail(m in model(), pos in any::<prop::sample::Index>(), mask in 1u8..=255) {
        let mut bytes = serialize_quantized(&m);
        let i = pos.index(bytes.len());
        bytes[i] ^= mask;
        if let Ok(decoded) = deserialize_quantized(&bytes) {
            prop_assert_eq!(serialize_quantized(&decoded), bytes);
        }
    }

    #[test]
    fn truncation_is_always_an_error(m in model(), cut in any::<prop::sample::Index>()) {
        let bytes = serialize_quantized(&m);
        let n = cut.index(bytes.len());
        prop_assert!(deserialize_quantized(&bytes[..n]).is_err());
    }

    #[test]
    fn full_precision_round_trip(seed in 0u64..1000, hidden in 1usize..20) {
        let net = init_net(&[2, hidden, 3], seed).unwrap();
        let bytes = serialize_net(&net);
        prop_assert_eq!(deserialize_net(&bytes).unwrap(), net);
    }
}

#[test]
fn artifacts_dispatch_on_magic() {
    let net = init_net(&[2, 3, 2], 1).unwrap();
    let bytes = ModelArtifact::Full(net.clone()).to_bytes();
    match ModelArtifact::from_bytes(&bytes).unwrap() {
        ModelArtifact::Full(back) => assert_eq!(back, net),
        ModelArtifact::Quantized(_) => panic!("wrong artifact kind"),
    }
    assert!(matches!(ModelArtifact::from_bytes(b"NOPE...."), Err(Error::BadMagic { .. })));
}

#[test]
fn unknown_version_is_rejected() {
    let net = init_net(&[2, 3, 2], 1).unwrap();
    let mut bytes = serialize_net(&net);
    bytes[4..6].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(deserialize_net(&bytes), Err(Error::VersionMismatch { .. })));
}
