#![no_main]
use cutlayer::formats::{parse_matrix_market, write_matrix_market};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(a) = parse_matrix_market(text) {
        let b = parse_matrix_market(&write_matrix_market(&a)).unwrap();
        assert_eq!((a.rows(), a.cols(), a.nnz()), (b.rows(), b.cols(), b.nnz()));
    }
});
