#include <stdio.h>
#include <string.h>

#include "puf_auth.h"

#define CHECK(expr)                                                          \
    do {                                                                     \
        PufStatus s_ = (expr);                                               \
        if (s_ != PUF_STATUS_OK) {                                           \
            char msg_[256];                                                  \
            puf_last_error_message(msg_, sizeof msg_);                       \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__,          \
                    puf_status_str(s_), msg_);                               \
            return 1;                                                        \
        }                                                                    \
    } while (0)

int main(void) {
    uint8_t enrolled[8] = {0xA5, 0x3C, 0x0F, 0xF0, 0x99, 0x66, 0x12, 0x34};
    uint8_t noisy[8];
    uint8_t fixed[8];
    uint8_t tag = 0;
    PufHelper *h = NULL;
    PufDecodeStats stats;
    double tau = 0;
    uint8_t floored = 0;
    size_t len = 0;

    CHECK(puf_variant_tag("H(13,8)", &tag));
    CHECK(puf_helper_enroll(enrolled, 64, tag, &h));

    memcpy(noisy, enrolled, sizeof noisy);
    noisy[0] ^= 0x04;
    noisy[5] ^= 0x80;
    CHECK(puf_helper_decode(h, noisy, 64, fixed, sizeof fixed, &stats));
    if (memcmp(fixed, enrolled, sizeof fixed) != 0 || stats.single_corrected != 2) {
        fprintf(stderr, "decode mismatch\n");
        return 1;
    }

    CHECK(puf_helper_serialize(h, NULL, 0, &len));
    puf_helper_free(h);

    CHECK(puf_tau_max(16, 0.5, 1e-6, &tau, &floored));
    if (tau != 0.0 || floored != 1) {
        fprintf(stderr, "tau_max(16) not floored\n");
        return 1;
    }
    printf("ok %zu\n", len);
    return 0;
}
