#![no_main]
use cutlayer::formats::{parse_pgm, write_pgm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = parse_pgm(data) {
        let again = parse_pgm(&write_pgm(&img)).expect("written PGM parses");
        assert_eq!(again, img);
    }
});
