/* Minimal runtime support for generated model libraries.
 * C99, no allocation; the only I/O is printf inside io_check.
 */
#ifndef TVM_CRT_H
#define TVM_CRT_H

#include <stdio.h>

/* Largest absolute elementwise difference between two float vectors. */
static inline float io_max_abs_err(const float* got, const float* want, int n) {
    float worst = 0.0f;
    int i;
    for (i = 0; i < n; ++i) {
        float d = got[i] - want[i];
        if (d < 0.0f) {
            d = -d;
        }
        if (d > worst) {
            worst = d;
        }
    }
    return worst;
}

/* Compare n floats against a reference, reporting the max abs error.
 * Returns 0 when every |got - want| <= tol, 1 otherwise.
 */
static inline int io_check(const float* got, const float* want, int n, float tol) {
    float worst = io_max_abs_err(got, want, n);
    int ok = worst <= tol;
    printf("max abs error %g over %d values (tol %g): %s\n",
           (double)worst, n, (double)tol, ok ? "OK" : "FAIL");
    return ok ? 0 : 1;
}

#endif /* TVM_CRT_H */
