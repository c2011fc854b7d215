use proptest::prelude::*;

use cogvox::embedding::parse_embedding;
use cogvox::manifest::parse_manifest;
use cogvox::transcript::{parse_transcript, AnnotatedTranscript, Task};

/// Every sentence has one root and every token reaches it without revisiting
/// a node.
fn trees_are_well_formed(t: &AnnotatedTranscript) -> bool {
    t.sentences.iter().all(|s| {
        let n = s.tokens.len();
        let roots = s.tokens.iter().filter(|k| k.head == 0).count();
        roots == 1
            && s.tokens.iter().all(|start| {
                let mut seen = vec![false; n + 1];
                let mut cur = start.index;
                while cur != 0 {
                    if cur > n || seen[cur] {
                        return false;
                    }
                    seen[cur] = true;
                    cur = s.tokens[cur - 1].head;
                }
                true
            })
    })
}

const LINE_PIECES: [&str; 12] = [
    "1\tthe\tthe\tDET\t2\tdet\n",
    "2\tboy\tboy\tNOUN\t0\troot\n",
    "3\tum\tum\tINTJ\t2\tdiscourse\n",
    "2\tran\trun\tVERB\t1\troot\n",
    "1\tx\tx\tX\t1\tdep\n",
    "\n",
    "# comment\n",
    "1-2\tdon't\t_\t_\t_\t_\n",
    "1\ta\ta\tBOGUS\t0\troot\n",
    "4\t.\t.\tPUNCT\t2\tpunct\n",
    "1\tcow\tcow\tNOUN\tNN\t_\t0\troot\t_\t_\n",
    "\t\t\t\n",
];

fn line_soup() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0usize..LINE_PIECES.len(), 0..20)
        .prop_map(|ix| ix.iter().flat_map(|&i| LINE_PIECES[i].bytes()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn transcript_parser_returns_trees_or_errors(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        if let Ok(t) = parse_transcript(&bytes[..], "p", Task::Ctd, 1.0) {
            prop_assert!(trees_are_well_formed(&t));
        }
    }

    #[test]
    fn structured_line_soup_parses_to_trees_or_errors(bytes in line_soup()) {
        if let Ok(t) = parse_transcript(&bytes[..], "p", Task::Pf, 2.5) {
            prop_assert!(trees_are_well_formed(&t));
        }
    }

    #[test]
    fn manifest_parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let mut input = b"participant_id,task,transcript_path,embedding_path,duration_seconds,diagnosis,mmse\n".to_vec();
        input.extend(bytes);
        let _ = parse_manifest(&input[..]);
    }

    #[test]
    fn embedding_parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200), binary in any::<bool>()) {
        let mut input = if binary { b"EMB1".to_vec() } else { Vec::new() };
        input.extend(bytes);
        let _ = parse_embedding(&input, "p", Task::Ctd, 4);
    }
}
