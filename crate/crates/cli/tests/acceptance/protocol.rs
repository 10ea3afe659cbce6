use easyasr_cli::{parse_command_line, Command, Component};
use easyasr_core::{parse_model_config, DecoderKind, EncoderKind};

use crate::{ensure, Outcome};

const TRAIN_COMMAND: &str = r#"PAI -name ASR_Train
-Dfinetune=false
-Dconfig='your_path/model_config'
-Dexport='your_path/model_export_dir'
-Dcluster='{"worker": {"count": 4,
    "cpu": 2000, "gpu": 800,
    "memory": 100000}}';"#;

const CONFIG_CLIP: &str = r#""encoder": TransformerEncoder,
"encoder_params": {
    "encoder_layers": 12,
    "num_heads": 8,...
  },
"decoder": JointCTCAttenDecoder,
"decoder_params": {
    "attn_decoder": TransformerDecoder,
    "attn_decoder_params": {
      "hidden_layers": 6,
      "num_heads": 8,...
    },
    "ctc_decoder": CTCDecoder,
    "ctc_decoder_params": {...},
  },
"loss": MultiTaskCTCEntropyLoss,
"loss_params": {
    "seq_loss_params": {...},
    "ctc_loss_params": {...},
    "lambda_value": 0.30,
}"#;

pub fn parsing() -> Outcome {
    let cmd = parse_command_line(TRAIN_COMMAND).map_err(|e| e.to_string())?;
    let Command::Run(inv) = cmd else {
        return Err(format!("parsed as {cmd:?}"));
    };
    ensure(inv.component == Component::Train, || format!("component {}", inv.component))?;
    ensure(inv.get("finetune") == Some("false"), || "finetune flag".into())?;
    ensure(inv.get("config") == Some("your_path/model_config"), || "config flag".into())?;
    ensure(inv.get("export") == Some("your_path/model_export_dir"), || "export flag".into())?;
    let c = inv.cluster;
    ensure(
        (c.worker_count, c.cpu_centi, c.gpu_centi, c.memory_mb) == (4, 2000, 800, 100000),
        || format!("cluster {c:?}"),
    )?;

    // the elided parts of the clip take their defaults
    let filled = format!("{{{}}}", CONFIG_CLIP.replace(",...", "").replace("...", ""));
    let cfg = parse_model_config(&filled).map_err(|e| e.to_string())?;
    let attn = cfg.decoder_params.attention.as_ref().ok_or("no attention decoder")?;
    ensure(
        cfg.encoder == EncoderKind::Transformer
            && cfg.decoder == DecoderKind::JointCtcAttention
            && cfg.encoder_params.encoder_layers == 12
            && cfg.encoder_params.num_heads == 8
            && attn.hidden_layers == 6
            && attn.num_heads == 8
            && cfg.loss_params.lambda_value == 0.30,
        || format!("config {cfg:?}"),
    )?;
    Ok(format!(
        "cluster {{{}, {}, {}, {}}}; encoder_layers {}, num_heads {}, hidden_layers {}, lambda {}",
        c.worker_count,
        c.cpu_centi,
        c.gpu_centi,
        c.memory_mb,
        cfg.encoder_params.encoder_layers,
        cfg.encoder_params.num_heads,
        attn.hidden_layers,
        cfg.loss_params.lambda_value
    ))
}
