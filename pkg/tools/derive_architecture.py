"""Derive the layer table of Text2Mel and SSRN from the architecture description.

Independent of the ``dctts`` package: the layer lists are written out here by
hand, and shapes and parameter counts follow from
  conv  o<-i, kernel k : weight (o, i, k) + bias o, length kept
  HC    on c, kernel k : conv 2c<-c then highway, output c channels, length kept
  deconv o<-i         : weight (o, i, 2) + bias o, length doubled

    python tools/derive_architecture.py [e d c F Fp] > docs/architecture.tsv
"""
import sys

COLUMNS = ["layer", "kind", "kernel", "dilation", "causal", "in", "out",
           "weight_shape", "params", "out_channels", "out_time"]


def conv(i, o, k=1, dil=1, causal=False):
    return ("conv", k, dil, causal, i, o)


def hc(c, k, dil, causal):
    return ("highway", k, dil, causal, c, 2 * c)


def deconv(i, o):
    return ("deconv", 2, 1, False, i, o)


def text_enc(e, d):
    L = [conv(e, 2 * d), conv(2 * d, 2 * d)]
    L += [hc(2 * d, 3, dil, False) for dil in (1, 3, 9, 27)] * 2
    L += [hc(2 * d, 3, 1, False)] * 2
    L += [hc(2 * d, 1, 1, False)] * 2
    return L


def audio_enc(d, F):
    L = [conv(F, d, causal=True), conv(d, d, causal=True), conv(d, d, causal=True)]
    L += [hc(d, 3, dil, True) for dil in (1, 3, 9, 27)] * 2
    L += [hc(d, 3, 3, True)] * 2
    return L


def audio_dec(d, F):
    L = [conv(2 * d, d, causal=True)]
    L += [hc(d, 3, dil, True) for dil in (1, 3, 9, 27)]
    L += [hc(d, 3, 1, True)] * 2
    L += [conv(d, d, causal=True)] * 3
    L += [conv(d, F, causal=True)]
    return L


def ssrn(c, F, Fp):
    L = [conv(F, c), hc(c, 3, 1, False), hc(c, 3, 3, False)]
    L += [deconv(c, c), hc(c, 3, 1, False), hc(c, 3, 3, False)] * 2
    L += [conv(c, 2 * c)]
    L += [hc(2 * c, 3, 1, False)] * 2
    L += [conv(2 * c, Fp)]
    L += [conv(Fp, Fp)] * 3
    return L


def rows(e=128, d=256, c=512, F=80, Fp=513):
    out = [("text_enc.embed", "embed", 1, 1, False, 32, e, f"{e}x32", e * 32, e, "N")]
    for prefix, layers, time in (("text_enc", text_enc(e, d), "N"),
                                 ("audio_enc", audio_enc(d, F), "T"),
                                 ("audio_dec", audio_dec(d, F), "T"),
                                 ("ssrn", ssrn(c, F, Fp), "T")):
        scale = 1
        for idx, (kind, k, dil, causal, i, o) in enumerate(layers):
            if kind == "deconv":
                scale *= 2
            t = time if scale == 1 else f"{scale}{time}"
            out_ch = i if kind == "highway" else o
            out.append((f"{prefix}.{idx:02d}", kind, k, dil, causal, i, o,
                        f"{o}x{i}x{k}", o * i * k + o, out_ch, t))
    return out


def main(argv):
    dims = [int(v) for v in argv] if argv else []
    print("\t".join(COLUMNS))
    for r in rows(*dims):
        print("\t".join(str(v) for v in r))


if __name__ == "__main__":
    main(sys.argv[1:])
