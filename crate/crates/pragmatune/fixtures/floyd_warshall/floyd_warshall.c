/* All-pairs shortest paths, self-timed. The marker comment below the init
 * loop is replaced by the tuner's pragma stack; the id pragmas name the
 * loops declared in loops.json. */
#include <stdio.h>
#include <time.h>

#define N 160

static int path[N][N];

int main(void)
{
    int i, j, k;

    for (i = 0; i < N; i++)
        for (j = 0; j < N; j++)
            path[i][j] = (i * 31 + j * 17) % 97 + 1;

    struct timespec t0, t1;
    clock_gettime(CLOCK_MONOTONIC, &t0);

    /* MCTREE PRAGMA STACK */
#pragma clang loop id(loop1)
    for (k = 0; k < N; k++)
#pragma clang loop id(loop2)
        for (i = 0; i < N; i++)
#pragma clang loop id(loop3)
            for (j = 0; j < N; j++)
                path[i][j] = path[i][j] < path[i][k] + path[k][j]
                                 ? path[i][j]
                                 : path[i][k] + path[k][j];

    clock_gettime(CLOCK_MONOTONIC, &t1);

    long sum = 0;
    for (i = 0; i < N; i++)
        sum += path[i][(i * 13) % N];
    fprintf(stderr, "checksum %ld\n", sum);

    printf("%.6f\n",
           (double)(t1.tv_sec - t0.tv_sec) + (double)(t1.tv_nsec - t0.tv_nsec) / 1e9);
    return 0;
}
