#![no_main]

use libfuzzer_sys::fuzz_target;
use nsatp::autodiff::Checkpoint;
use nsatp::harness::Trained;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ckpt) = Checkpoint::from_json(text) {
        let again = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(again.to_json().unwrap(), ckpt.to_json().unwrap());
        // Rebuilding may fail on inconsistent metadata but must not panic.
        let _ = Trained::from_checkpoint(&ckpt);
    }
});
