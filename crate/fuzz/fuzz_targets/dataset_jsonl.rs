#![no_main]

use libfuzzer_sys::fuzz_target;
use nsatp::sample::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = Dataset::read_jsonl(data) {
        for r in &ds.records {
            assert!(r.sample.validate().is_ok());
            assert_eq!(r.sample.n_p(), ds.header.n_p);
        }
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        assert_eq!(Dataset::read_jsonl(buf.as_slice()).unwrap(), ds);
    }
});
