//! Parity with the Hugging Face implementation on the tiny fixture checkpoint.
//! Reference values come from `oracles/tiny_roberta.py` (float64 forward/backward).

use std::collections::HashMap;
use std::path::PathBuf;

use affect_backbones::model::{forward, Params, TokenBatch};
use affect_backbones::{RobertaBackbone, TextTokenizer};
use affect_core::encoders::{Backbone, EncoderSpec, Pooling};
use candle_core::{DType, Device, IndexOp, Tensor, Var};

const IDS: &[&[u32]] = &[
    &[0, 44, 224, 73, 72, 72, 79, 266, 82, 266, 267, 2],
    &[0, 87, 261, 262, 80, 72, 224, 76, 86, 224, 263, 2],
    &[0, 68, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1],
];
const CLS: &[&[f64]] = &[
    &[0.5493837655712039, -0.2486711503871934, 0.13033841202936117, -0.3283689092400242, 0.4233128106971938, 0.9102555950580025, 0.17501804738511267, 1.703720968473849, 1.2208162358095818, -1.0564846132539445, -0.44464882225330316, 0.9592460857328687, -1.521307305459124, -2.339514417756707, -0.7130230139633872, 1.3264966702185712],
    &[0.45226660239741145, -0.08741430640214964, 0.3003516923975846, -0.3850567151862718, 0.32937359947685946, 0.9243746680773233, 0.2266161511134129, 1.539428512065852, 1.442324508778669, -1.13242161848969, -0.4043877972777247, 0.9267133603956685, -1.6661534374414058, -2.323163568393253, -0.6451082487638076, 1.1597039133633715],
    &[1.0848276087797606, -0.8465475733970651, -0.3851211030932178, -0.043862656020261036, 0.5847721533221633, 0.7794911968429606, 0.4419870694754742, 1.2311561794690133, 1.7359670461812973, -1.151706344333608, 0.35646876741676287, 1.0924851562731641, -2.195647609675382, -1.6553760341428203, -0.9451853477576928, 0.8301409363605764],
];
const MEAN: &[&[f64]] = &[
    &[0.45554205684060656, 0.16311931712021885, 0.47405355158206336, -0.26978574043571873, 0.6250900304924777, 0.7050843559031729, -0.15074325671226732, 1.435187455352103, -0.24761433186152662, 0.30846290995770353, -0.07592221021669812, -0.38711658463643545, -1.5719800816202394, -0.8290681050566011, -0.4556104363448424, -0.09831518830308665],
    &[0.7055572464230284, 0.1685038027651772, 0.6294210191639057, -0.28012540270532316, 0.3262421973372009, 0.7138199659712582, 0.364478997567289, 1.3960539859833785, 0.13093136400433755, 0.16160734028869408, 0.00918225911892779, -0.5213123940416223, -1.574257332025207, -1.6683632352712985, -0.40389704381496344, -0.02037865566781012],
    &[1.34550566938486, -0.9415692613421035, -0.4210916891723022, -0.1282250366658055, 0.6585905870801249, 0.8479850730229587, 0.6083132699694054, 1.1568338792042991, 0.8691491981612506, -0.832923097309736, 0.06401629598962837, 0.716680565783074, -1.2080808732877368, -1.3672251013236154, -0.928627971239183, 0.5285768246069257],
];
const LOSS: f64 = 45.503137265622684;
const GRADS: &[(&str, &[f64])] = &[
    ("embeddings.LayerNorm.weight", &[14.281217827138253, -1.5727362329714654, 4.395985139507001, -1.1026303256019476]),
    ("encoder.layer.0.attention.self.query.weight", &[-0.5293526231694012, 0.27921716126857926, -0.0827386513391038, 0.3940328070003845]),
    ("encoder.layer.0.attention.output.LayerNorm.bias", &[3.802707425346438, 4.193045777780677, 13.988705139877709, -2.176256461510533]),
    ("encoder.layer.1.intermediate.dense.weight", &[-0.01561216078452659, -0.15317788964559942, -0.21899830805206824, 0.1008880451949339]),
    ("encoder.layer.1.output.dense.bias", &[12.026502482257259, 9.835644954557875, 5.952588324599531, 5.823227149588177]),
    ("embeddings.position_embeddings.weight", &[15.568475864380467, 5.645189589396403, 40.95299139630866, -1.4243590183368764]),
    ("embeddings.word_embeddings.weight", &[0.40042560666092664, -0.03767166416610031, -0.23244338314165952, 0.06256102824402325]),
];

const TEXTS: [&str; 3] = ["I feel so sad for them.", "the theme is in there", "a"];
const MAX_LEN: usize = 12;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny-roberta")
}

fn spec(pooling: Pooling) -> EncoderSpec {
    EncoderSpec { max_tokens: MAX_LEN, ..EncoderSpec::new("local:tiny", pooling) }
}

fn unpadded(row: &[u32]) -> Vec<u32> {
    let end = row.iter().position(|&t| t == 1).unwrap_or(row.len());
    row[..end].to_vec()
}

fn texts() -> Vec<String> {
    TEXTS.iter().map(|s| s.to_string()).collect()
}

#[test]
fn both_tokenizer_formats_match_reference_ids() {
    let tmp = tempfile::tempdir().unwrap();
    for f in ["vocab.json", "merges.txt"] {
        std::fs::copy(fixture().join(f), tmp.path().join(f)).unwrap();
    }
    let from_json = TextTokenizer::from_dir(&fixture(), MAX_LEN).unwrap();
    let from_files = TextTokenizer::from_dir(tmp.path(), MAX_LEN).unwrap();
    for (text, want) in TEXTS.iter().zip(IDS) {
        let want = unpadded(want);
        assert_eq!(from_json.encode(text).unwrap(), want, "{text}");
        assert_eq!(from_files.encode(text).unwrap(), want, "{text}");
    }
}

fn f64_backbone(pooling: Pooling) -> RobertaBackbone {
    let base = RobertaBackbone::load(&fixture(), &spec(pooling)).unwrap();
    let params: Params =
        base.params().iter().map(|(k, t)| (k.clone(), t.to_dtype(DType::F64).unwrap())).collect();
    base.with_params(params).unwrap()
}

fn batch(dtype: DType) -> TokenBatch {
    let seqs: Vec<Vec<u32>> = IDS.iter().map(|r| unpadded(r)).collect();
    TokenBatch::new(&seqs, 1, dtype).unwrap()
}

fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol * (1.0 + w.abs()), "{what}[{i}]: {g} vs {w}");
    }
}

#[test]
fn hidden_states_match_reference_in_double_precision() {
    let bb = f64_backbone(Pooling::ClsToken);
    let hidden = forward(bb.config(), bb.params(), &batch(DType::F64), None).unwrap();
    for (i, want) in CLS.iter().enumerate() {
        let got: Vec<f64> = hidden.i((i, 0)).unwrap().to_vec1().unwrap();
        assert_close(&got, want, 1e-10, "cls");
    }
    // the pooled paths reproduce the same numbers
    let cls = bb.encode(&texts()).unwrap();
    let mean = f64_backbone(Pooling::MeanTokens).encode(&texts()).unwrap();
    for i in 0..3 {
        assert_close(cls.row(i).as_slice().unwrap(), CLS[i], 1e-10, "encode cls");
        assert_close(mean.row(i).as_slice().unwrap(), MEAN[i], 1e-10, "encode mean");
    }
}

#[test]
fn single_precision_encoding_is_close_to_reference() {
    let bb = RobertaBackbone::load(&fixture(), &spec(Pooling::MeanTokens)).unwrap();
    let got = bb.encode(&texts()).unwrap();
    for i in 0..3 {
        assert_close(got.row(i).as_slice().unwrap(), MEAN[i], 1e-5, "f32 mean");
    }
}

#[test]
fn gradients_match_reference() {
    let bb = f64_backbone(Pooling::ClsToken);
    let vars: HashMap<String, Var> =
        bb.params().iter().map(|(k, t)| (k.clone(), Var::from_tensor(t).unwrap())).collect();
    let params: Params = vars.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect();
    let hidden = forward(bb.config(), &params, &batch(DType::F64), None).unwrap();
    let cls = hidden.i((.., 0, ..)).unwrap();
    let w: Vec<f64> = (0..16).map(|i| -1.0 + 2.0 * i as f64 / 15.0).collect();
    let w = Tensor::from_vec(w, (16, 1), &Device::Cpu).unwrap();
    let y = Tensor::new(&[1.0f64, 4.0, 7.0], &Device::Cpu).unwrap();
    let pred = (cls.matmul(&w).unwrap().squeeze(1).unwrap() + 0.5).unwrap();
    let loss = (pred - y).unwrap().sqr().unwrap().mean_all().unwrap();
    assert!((loss.to_scalar::<f64>().unwrap() - LOSS).abs() < 1e-9 * LOSS);

    let grads = loss.backward().unwrap();
    for (name, want) in GRADS {
        let g = grads.get(vars[*name].as_tensor()).unwrap_or_else(|| panic!("no gradient for {name}"));
        let got: Vec<f64> = match *name {
            "encoder.layer.0.attention.self.query.weight" => g.i((0, ..4)).unwrap().to_vec1().unwrap(),
            "encoder.layer.1.intermediate.dense.weight" => g.i((3, ..4)).unwrap().to_vec1().unwrap(),
            "embeddings.position_embeddings.weight" => g.i((2, ..4)).unwrap().to_vec1().unwrap(),
            "embeddings.word_embeddings.weight" => g.i((IDS[0][1] as usize, ..4)).unwrap().to_vec1().unwrap(),
            _ => g.i(..4).unwrap().to_vec1().unwrap(),
        };
        assert_close(&got, want, 1e-8, name);
    }
}
