/* Mock kernels for the mac_engine accelerator.
 *
 * Host-side stand-ins for the offloaded dot-product engine, written to
 * produce bit-compatible results with the compiler's reference
 * interpreter: same float32 accumulation order, bias first, ascending
 * index.  Each kernel validates its dims vector and returns nonzero on
 * a bad descriptor, zero on success.
 */
#include <stdint.h>

/* dims = { in_features, units }
 * in [in_features], weight [units * in_features], bias [units],
 * out [units].
 */
int32_t mac_engine_dense(const float* in, const float* weight,
                         const float* bias, float* out,
                         const int32_t* dims) {
    int32_t c = dims[0];
    int32_t units = dims[1];
    int32_t u, i;
    if (c <= 0 || units <= 0) {
        return 1;
    }
    for (u = 0; u < units; ++u) {
        float acc = bias[u];
        for (i = 0; i < c; ++i) {
            acc = acc + weight[u * c + i] * in[i];
        }
        out[u] = acc;
    }
    return 0;
}

/* dims = { channels, in_len, kernel_len, stride, out_len }
 * One shared kernel [kernel_len] and one shared scalar bias applied
 * depthwise to every channel, valid padding.
 * in [channels * in_len], out [channels * out_len].
 */
int32_t mac_engine_conv1d(const float* in, const float* kernel,
                          const float* bias, float* out,
                          const int32_t* dims) {
    int32_t channels = dims[0];
    int32_t in_len = dims[1];
    int32_t kernel_len = dims[2];
    int32_t stride = dims[3];
    int32_t out_len = dims[4];
    int32_t c, j, k;
    if (channels <= 0 || kernel_len <= 0 || stride <= 0 || out_len <= 0) {
        return 1;
    }
    if (in_len < kernel_len || out_len != (in_len - kernel_len) / stride + 1) {
        return 1;
    }
    for (c = 0; c < channels; ++c) {
        for (j = 0; j < out_len; ++j) {
            float acc = bias[0];
            const float* window = in + c * in_len + j * stride;
            for (k = 0; k < kernel_len; ++k) {
                acc = acc + kernel[k] * window[k];
            }
            out[c * out_len + j] = acc;
        }
    }
    return 0;
}
