/* Symmetric rank-2k update micro-kernel, self-timed. The #P markers are
 * filled in by the tuner: P0-P2 are whole pragma lines (packing and
 * interchange), P3-P5 are the tile sizes. Toolchains without the loop
 * transformation pragmas ignore them and time the plain kernel. */
#include <stdio.h>
#include <time.h>

#define N 220
#define M 180

static double A[N][M], B[N][M], C[N][N];

int main(void)
{
    int i, j, k;

    for (i = 0; i < N; i++)
        for (k = 0; k < M; k++) {
            A[i][k] = (double)((i + k) % 13) / 13.0;
            B[i][k] = (double)((i * 3 + k) % 7) / 7.0;
        }
    for (i = 0; i < N; i++)
        for (j = 0; j < N; j++)
            C[i][j] = (double)((i - j) % 5) / 5.0;

    struct timespec t0, t1;
    clock_gettime(CLOCK_MONOTONIC, &t0);

#pragma clang loop(j2) pack array(A) allocate(malloc)
#pragma clang loop(i1) pack array(B) allocate(malloc)
#pragma clang loop(i1,j1,k1,i2,j2) interchange permutation(j1,k1,i1,j2,i2)
#pragma clang loop(i,j,k) tile sizes(50,128,256) floor_ids(i1,j1,k1) tile_ids(i2,j2,k2)
#pragma clang loop id(i)
    for (i = 0; i < N; i++)
#pragma clang loop id(j)
        for (j = 0; j < N; j++)
#pragma clang loop id(k)
            for (k = 0; k < M; k++)
                C[i][j] += A[i][k] * B[j][k] + B[i][k] * A[j][k];

    clock_gettime(CLOCK_MONOTONIC, &t1);

    double sum = 0.0;
    for (i = 0; i < N; i++)
        sum += C[i][(i * 7) % N];
    fprintf(stderr, "checksum %.6f\n", sum);

    printf("%.6f\n",
           (double)(t1.tv_sec - t0.tv_sec) + (double)(t1.tv_nsec - t0.tv_nsec) / 1e9);
    return 0;
}
