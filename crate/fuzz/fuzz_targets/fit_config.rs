#![no_main]
use cutlayer::learn::FitConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(cfg) = serde_json::from_slice::<FitConfig>(data) else { return };
    // keep accepted configs cheap enough to build weights for
    if cfg.validate().is_ok() && cfg.k * cfg.height * cfg.width <= 1 << 16 {
        assert_eq!(cfg.initial_weights().len(), cfg.k);
    }
});
