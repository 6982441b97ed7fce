use mssl::audio::{write_manifest, write_wav, SynthSpec};
use std::path::PathBuf;

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).expect("out dir"));
    std::fs::create_dir_all(&out).unwrap();
    let spec = SynthSpec { seed: 43, ..SynthSpec::default() };
    let utts = mssl::audio::synth_corpus(&spec, 4, 4).unwrap();
    let mut entries = Vec::new();
    for (i, u) in utts.iter().enumerate() {
        let utt_id = format!("test-{i:04}");
        let path = out.join(format!("{utt_id}.wav"));
        write_wav(&path, &u.waveform).unwrap();
        entries.push((utt_id.clone(), PathBuf::from(format!("{utt_id}.wav")), u.transcript.clone()));
    }
    write_manifest(&out.join("test.tsv"), &entries).unwrap();
    println!("{}", out.join("test.tsv").display());
}
