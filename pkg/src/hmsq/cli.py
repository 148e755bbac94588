"""Command line front end.

Exit status: 0 on success, 2 for invalid input (bad config, malformed file,
bad arguments), 1 for failures while running.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path


from . import baselines as bl
from . import bitstream as bs
from . import experiments as ex
from . import loss as ls
from . import scalable as sc
from . import tracking as tr
from .hmm import HmmModel, NumericalImpossibility, fit, sample

log = logging.getLogger("hmsq")

SWEEPS = {
    "rd": (ex.run_rd_sweep, "rate"),
    "trans": (ex.run_transition_sweep, "a"),
    "loss": (ex.run_loss_sweep, "loss_rate"),
    "scalable": (ex.run_scalable_sweep, "r2"),
    "delayed": (ex.run_delayed_sweep, "r2"),
    "bounds": (ex.run_bounds, "rate"),
}


class UsageError(ValueError):
    pass


def _config(args) -> ex.ExperimentConfig:
    d = {}
    if args.config:
        d = dataclasses.asdict(ex.ExperimentConfig.from_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            d[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            d[k.strip()] = v
    if args.seed is not None:
        d["seeds"] = [args.seed]
    return ex.ExperimentConfig.from_dict(d)


def _model(args, cfg=None) -> HmmModel:
    if getattr(args, "model", None):
        return HmmModel.load(args.model)
    return (cfg or _config(args)).model()


def _load_system(path):
    d = json.loads(Path(path).read_text())
    if "kind" in d:
        return bl.load_codec(path)
    return tr.CodecSystem.from_dict(d)


def _need_out(args):
    if not args.out:
        raise UsageError("--out is required")
    return Path(args.out)


def cmd_gen(args):
    model = _model(args)
    states, x = sample(model, args.n, args.seed if args.seed is not None else 0)
    bs.write_samples(_need_out(args), x)
    if args.states:
        Path(args.states).write_text("".join(f"{s}\n" for s in states.tolist()))


def cmd_fit(args):
    x = bs.ingest_samples(args.input)
    model = fit(x, args.states, seed=args.seed or 0, max_iters=args.iters)
    model.save(_need_out(args))


def cmd_train(args):
    cfg = _config(args)
    model = _model(args, cfg)
    seed = args.seed if args.seed is not None else 0
    obs = bs.ingest_samples(args.input) if args.input else sample(model, cfg.train_len, seed)[1]
    if args.codec == "tracking":
        system = tr.train_system(model, args.rate, cfg.T, em_rounds=cfg.em_rounds, seed=seed,
                                 obs=obs, p_loss=args.p_loss)
        system.save(_need_out(args))
    elif args.codec == "dpcm":
        bl.save_codec(bl.dpcm_train(obs, args.rate), _need_out(args))
    else:
        bl.save_codec(bl.fsq_train(obs, cfg.fsq_states, args.rate, seed=seed), _need_out(args))


def _codec_id(system):
    if isinstance(system, bl.DpcmCodec):
        return bs.DPCM
    if isinstance(system, bl.FsqCodec):
        return bs.FSQ
    return bs.TRACKING


def cmd_encode(args):
    system = _load_system(args.system)
    x = bs.ingest_samples(args.input)
    out = _need_out(args)
    if args.enh_rate:
        if not isinstance(system, tr.CodecSystem):
            raise UsageError("scalable coding needs a tracking system")
        ss = sc.ScalableSystem(system, args.enh_rate, args.L)
        st = sc.encode_scalable(x, ss)
        sid = args.stream_id
        bs.write_stream(out, st.base_indices,
                        bs.StreamInfo(bs.SCALABLE_BASE, system.rate_bits, x.size, 0, sid))
        bs.write_stream(str(out) + ".enh", st.enh_indices,
                        bs.StreamInfo(bs.SCALABLE_ENH, args.enh_rate, x.size, 0, sid, args.L, system.rate_bits))
        return
    if args.loss is not None:
        if not isinstance(system, tr.CodecSystem):
            raise UsageError("packetized output is only defined for the tracking codec")
        idx = ls.encode_lossy(x, system)
        chan = ls.LossChannel(args.loss, seed=args.seed)
        st = ls.simulate_loss(idx, chan)
        out.write_bytes(bs.packets_to_bytes(st.seq_nos, st.indices, system.rate_bits, st.n_total))
        return
    if isinstance(system, bl.DpcmCodec):
        idx = bl.dpcm_encode(x, system)[0]
    elif isinstance(system, bl.FsqCodec):
        idx = bl.fsq_encode(x, system)[0]
    else:
        idx = tr.encode(x, system)
    bs.write_stream(out, idx, bs.StreamInfo(_codec_id(system), system.rate_bits, x.size))


def cmd_decode(args):
    system = _load_system(args.system)
    data = Path(args.input).read_bytes()
    out = _need_out(args)
    info, _ = bs._read_header(data)
    if info.flags & bs.FLAG_PACKETIZED:
        seq, idx, rate, n = bs.packets_from_bytes(data)
        if rate != system.rate_bits:
            raise UsageError("packet file rate differs from the system rate")
        rec = ls.decode_lossy(ls.PacketStream(seq, idx, n), system)
    elif info.codec_id == bs.SCALABLE_BASE:
        _, bidx = bs.from_bytes(data)
        if args.enh:
            einfo, eidx = bs.read_stream(args.enh)
            bs.check_pair(info, einfo)
            rec, _ = sc.decode_enh(bidx, eidx, sc.ScalableSystem(system, einfo.rate_bits, einfo.L))
        else:
            rec = tr.decode(bidx, system)
    else:
        _, idx = bs.from_bytes(data)
        if info.codec_id != _codec_id(system) or info.rate_bits != system.rate_bits:
            raise UsageError("bitstream does not match the codec file")
        if isinstance(system, bl.DpcmCodec):
            rec = bl.dpcm_decode(idx, system)
        elif isinstance(system, bl.FsqCodec):
            rec = bl.fsq_decode(idx, system)[0]
        else:
            rec = tr.decode(idx, system)
    bs.write_samples(out, rec)


def cmd_sweep(args):
    cfg = _config(args)
    run, x_field = SWEEPS[args.cmd]
    timings = []
    rows = run(cfg, timings)
    out = Path(args.out or cfg.out or f"results/{args.cmd}.csv")
    ex.write_results(rows, out, timings, {"experiment": args.cmd})
    ex.write_plot_data(rows, out.with_suffix(""), x_field)
    for r in rows:
        print(f"{r.experiment:9s} {r.method:18s} a={r.a:<5g} R={r.rate} R2={r.r2} L={r.L} "
              f"loss={r.loss_rate:<5g} {r.distortion_db:9.3f} dB +- {r.std_err:.3f}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or key=value experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hmsq", description="Belief-tracking quantization of hidden Markov sources")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", parents=[common], help="sample a source to a file")
    g.add_argument("--model")
    g.add_argument("-n", type=int, default=100_000)
    g.add_argument("--states", help="also write the hidden state sequence here")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", parents=[common], help="Baum-Welch fit of a Gaussian HMM")
    f.add_argument("--input", required=True)
    f.add_argument("--states", type=int, default=2)
    f.add_argument("--iters", type=int, default=200)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("train", parents=[common], help="train a codec")
    t.add_argument("--model")
    t.add_argument("--input", help="training samples (default: sampled from the model)")
    t.add_argument("--rate", type=int, required=True)
    t.add_argument("--codec", choices=["tracking", "dpcm", "fsq"], default="tracking")
    t.add_argument("--p-loss", type=float, default=0.0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", parents=[common], help="samples -> bitstream")
    e.add_argument("--system", required=True)
    e.add_argument("--input", required=True)
    e.add_argument("--enh-rate", type=int, default=0, help="also write an enhancement layer to OUT.enh")
    e.add_argument("--L", type=int, default=0)
    e.add_argument("--stream-id", type=int, default=0)
    e.add_argument("--loss", type=float, help="write a packet file with simulated i.i.d. erasures")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", parents=[common], help="bitstream -> samples")
    d.add_argument("--system", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--enh", help="enhancement layer of a scalable stream")
    d.set_defaults(func=cmd_decode)

    for name in SWEEPS:
        s = sub.add_parser(name, parents=[common], help=f"{name} experiment sweep")
        s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericalImpossibility as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ex.ConfigError, bs.BitstreamError, UsageError, FileNotFoundError,
            json.JSONDecodeError, KeyError, ValueError, IndexError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
