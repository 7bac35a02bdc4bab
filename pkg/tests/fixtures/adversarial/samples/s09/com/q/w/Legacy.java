package com.q.w;

public class Legacy {
    public void f() throws Exception {
        javax.crypto.Cipher c = javax.crypto.Cipher.getInstance("DESede/ECB/PKCS5Padding");
        java.security.MessageDigest d = java.security.MessageDigest.getInstance("md5");
        javax.crypto.Cipher b = javax.crypto.Cipher.getInstance("Blowfish");
        Object o = MyCipher.getInstance("AES");
        char q = '"'; String t = "MessageDigest.getInstance(\"SHA-1\")";
    }
}
