#![no_main]
use cutlayer::formats::{decode_cwf, encode_cwf};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(field) = decode_cwf(data) else { return };
    assert!(field.data().iter().all(|v| v.is_finite()));
    let bytes = encode_cwf(&field);
    assert_eq!(decode_cwf(&bytes).unwrap(), field);
});
